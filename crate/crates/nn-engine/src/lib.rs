//! Minimal CNN engine: tensors, conv/BatchNorm/ReLU layers with a
//! nearest-centroid head, reverse-mode gradients through a fixed layer
//! sequence, momentum SGD and server-side pre-training.

pub mod dataset;
pub mod error;
pub mod forward;
pub mod io;
pub mod ops;
pub mod params;
pub mod rng;
pub mod spec;
pub mod tensor;
pub mod train;

pub use dataset::Dataset;
pub use error::{NnError, Result};
pub use forward::{backward, forward, update_running_stats, EffectiveStats, ForwardCache, LayerStats, Mode};
pub use ops::{batch_moments, bn_forward, conv2d, cross_entropy, global_avg_pool, nearest_centroid_logits, relu};
pub use params::{sgd_step, sgd_update, BnParams, ConvParams, GradientSet, ModelParams, OptState, StatsGrad, TrainConfig};
pub use rng::RngStream;
pub use spec::{LayerDesc, ModelSpec};
pub use tensor::Tensor;
pub use train::{argmax, dataset_loss, evaluate, init_prototypes, pretrain, EpochStats};
