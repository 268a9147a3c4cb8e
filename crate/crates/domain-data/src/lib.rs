//! Seeded synthetic data: a smooth-template source domain, affine
//! "contrast/brightness" style-shifted target domains, and few-shot episode
//! sampling.

pub mod config;
pub mod episode;
pub mod error;
pub mod gen;
pub mod io;
pub mod shift;

pub use config::DataConfig;
pub use episode::{sample_episode, Episode};
pub use error::{DataError, Result};
pub use gen::{gen_source, gen_templates, Templates};
pub use io::{decode_dataset, encode_dataset, load_dataset, save_dataset};
pub use nn_engine::Dataset;
pub use shift::{
    apply_style_shift, gen_domains, DomainParams, DEFAULT_BIAS_RANGE, DEFAULT_GAIN_RANGE,
};
