//! Linear combination coefficients for BN statistics: per layer, four
//! channel-shared scalars (source/target weight for the mean, source/target
//! weight for the variance).

use nn_engine::{LayerStats, StatsGrad};

use crate::error::{invalid_arg, Result};
use crate::stats::{EffectiveStats, VAR_FLOOR};

/// Index order within a layer's 4-vector.
pub const C_SRC_MEAN: usize = 0;
pub const C_TGT_MEAN: usize = 1;
pub const C_SRC_VAR: usize = 2;
pub const C_TGT_VAR: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct LccsCoefficients {
    /// One (c_s_mu, c_t_mu, c_s_var, c_t_var) per BN layer.
    pub layers: Vec<[f32; 4]>,
}

impl LccsCoefficients {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().flatten().all(|v| v.is_finite())
    }

    /// Flat view in layer order, 4 values per layer.
    pub fn flat(&self) -> Vec<f32> {
        self.layers.iter().flatten().copied().collect()
    }

    pub fn from_flat(values: &[f32]) -> Result<Self> {
        if values.is_empty() || values.len() % 4 != 0 {
            return invalid_arg("coefficient vector length must be a positive multiple of 4");
        }
        Ok(Self {
            layers: values
                .chunks_exact(4)
                .map(|c| [c[0], c[1], c[2], c[3]])
                .collect(),
        })
    }
}

/// Every layer starts at (1-lambda0, lambda0, 1-lambda0, lambda0), so
/// lambda0 = 0 reproduces the deployed source model exactly.
pub fn init_coefficients(n_bn_layers: usize, lambda0: f32) -> Result<LccsCoefficients> {
    if !(0.0..=1.0).contains(&lambda0) {
        return invalid_arg("lambda0 must lie in [0,1]");
    }
    if n_bn_layers == 0 {
        return invalid_arg("need at least one BN layer");
    }
    Ok(LccsCoefficients {
        layers: vec![[1.0 - lambda0, lambda0, 1.0 - lambda0, lambda0]; n_bn_layers],
    })
}

/// Chain rule through the statistics mix: the loss gradient with respect to
/// each layer's 4 coefficients, given the gradients of the effective
/// statistics. Where the variance clamp was active the variance-coefficient
/// gradient is zero.
pub fn coeff_gradients(
    source: &[LayerStats],
    target: &[LayerStats],
    effective: &EffectiveStats,
    stats_grads: &[StatsGrad],
) -> Result<Vec<[f32; 4]>> {
    let n = source.len();
    if target.len() != n || effective.layers.len() != n || stats_grads.len() != n {
        return invalid_arg("layer counts disagree in coefficient gradient");
    }
    let mut out = Vec::with_capacity(n);
    for l in 0..n {
        let (src, tgt, eff, g) = (&source[l], &target[l], &effective.layers[l], &stats_grads[l]);
        let mut acc = [0.0f64; 4];
        for c in 0..src.mean.len() {
            let dmu = g.dmean[c] as f64;
            acc[C_SRC_MEAN] += dmu * src.mean[c] as f64;
            acc[C_TGT_MEAN] += dmu * tgt.mean[c] as f64;
            if eff.var[c] > VAR_FLOOR {
                let dvar = g.dvar[c] as f64;
                acc[C_SRC_VAR] += dvar * src.var[c] as f64;
                acc[C_TGT_VAR] += dvar * tgt.var[c] as f64;
            }
        }
        out.push([acc[0] as f32, acc[1] as f32, acc[2] as f32, acc[3] as f32]);
    }
    Ok(out)
}
