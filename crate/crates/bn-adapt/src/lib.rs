//! Client-side BN-statistics adaptation: capture target support statistics,
//! re-parameterize BN layers as learnable linear combinations of source and
//! target statistics, stochastically mix in instance-level batch statistics,
//! and train the coefficients and local prototypes by cross-entropy descent.

pub mod adapt;
pub mod coeffs;
pub mod error;
pub mod mixstyle;
pub mod stats;

pub use adapt::{adapt_client, AdaptConfig, AdaptOutcome, AdaptTrace};
pub use coeffs::{coeff_gradients, init_coefficients, LccsCoefficients};
pub use error::{AdaptError, Result};
pub use mixstyle::{sample_mixstyle, MixStyleConfig};
pub use stats::{
    capture_batch_stats, capture_support_stats, mix_statistics, source_stats,
    stochastic_target_stats, EffectiveStats, SupportStats, VAR_FLOOR,
};
