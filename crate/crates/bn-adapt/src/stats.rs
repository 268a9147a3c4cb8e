//! Target-statistics capture and source/target statistics mixing.

use nn_engine::{
    batch_moments, bn_forward, conv2d, relu, Dataset, LayerDesc, LayerStats, ModelParams,
    ModelSpec, Tensor,
};

pub use nn_engine::EffectiveStats;

use crate::coeffs::LccsCoefficients;
use crate::error::{invalid_arg, Result};

/// Lower bound on any mixed variance entry.
pub const VAR_FLOOR: f32 = 1e-8;

/// Per-BN-layer channel statistics of a client's support set.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportStats {
    pub layers: Vec<LayerStats>,
    pub sample_count: usize,
}

/// The deployed model's running statistics, in BN layer order.
pub fn source_stats(params: &ModelParams) -> Vec<LayerStats> {
    params
        .bns
        .iter()
        .map(|bn| LayerStats {
            mean: bn.running_mean.clone(),
            var: bn.running_var.clone(),
        })
        .collect()
}

/// Sequential layer-by-layer statistics capture: one pass over `images`; at
/// each BN layer the per-channel mean and population variance of that
/// layer's input are recorded, and the layer then normalizes with the
/// statistics just captured before the pass continues.
pub fn capture_batch_stats(
    spec: &ModelSpec,
    params: &ModelParams,
    images: &Tensor,
) -> Result<Vec<LayerStats>> {
    let mut cur = images.clone();
    let mut out = Vec::with_capacity(spec.n_bn_layers());
    let (mut ci, mut bi) = (0usize, 0usize);
    for layer in &spec.layers {
        match *layer {
            LayerDesc::Conv2d { stride, padding, .. } => {
                let conv = &params.convs[ci];
                cur = conv2d(&cur, &conv.weight, &conv.bias, stride, padding)?;
                ci += 1;
            }
            LayerDesc::BatchNorm { eps, .. } => {
                let (mean, var) = batch_moments(&cur)?;
                let bn = &params.bns[bi];
                cur = bn_forward(&cur, &mean, &var, &bn.gamma, &bn.beta, eps)?;
                out.push(LayerStats { mean, var });
                bi += 1;
            }
            LayerDesc::Relu => cur = relu(&cur),
            LayerDesc::GlobalAvgPool => break,
        }
    }
    Ok(out)
}

/// Capture target support statistics from a full pass over the support set.
pub fn capture_support_stats(
    spec: &ModelSpec,
    params: &ModelParams,
    support: &Dataset,
) -> Result<SupportStats> {
    if support.is_empty() {
        return invalid_arg("support set must be non-empty");
    }
    let layers = capture_batch_stats(spec, params, &support.images)?;
    Ok(SupportStats {
        layers,
        sample_count: support.len(),
    })
}

/// Per-channel linear combination of source and target statistics under the
/// layer coefficients; the mixed variance is clamped from below.
pub fn mix_statistics(
    source: &[LayerStats],
    target: &[LayerStats],
    coeffs: &LccsCoefficients,
) -> Result<EffectiveStats> {
    let n = source.len();
    if target.len() != n || coeffs.n_layers() != n {
        return invalid_arg(format!(
            "layer count mismatch: source {n}, target {}, coefficients {}",
            target.len(),
            coeffs.n_layers()
        ));
    }
    let mut layers = Vec::with_capacity(n);
    for l in 0..n {
        let (src, tgt) = (&source[l], &target[l]);
        let [cs_mu, ct_mu, cs_v, ct_v] = coeffs.layers[l];
        let channels = src.mean.len();
        if tgt.mean.len() != channels {
            return invalid_arg("channel count mismatch between source and target statistics");
        }
        let mut mean = Vec::with_capacity(channels);
        let mut var = Vec::with_capacity(channels);
        for c in 0..channels {
            mean.push(cs_mu * src.mean[c] + ct_mu * tgt.mean[c]);
            var.push((cs_v * src.var[c] + ct_v * tgt.var[c]).max(VAR_FLOOR));
        }
        layers.push(LayerStats { mean, var });
    }
    Ok(EffectiveStats { layers })
}

/// Blend support statistics with the current mini-batch instance statistics:
/// lambda * support + (1 - lambda) * batch. With no lambda the support
/// statistics pass through unchanged.
pub fn stochastic_target_stats(
    support: &SupportStats,
    batch: &[LayerStats],
    lambda: Option<f32>,
) -> Result<Vec<LayerStats>> {
    let lam = match lambda {
        None => return Ok(support.layers.clone()),
        Some(l) => l,
    };
    if batch.len() != support.layers.len() {
        return invalid_arg("layer count mismatch between support and batch statistics");
    }
    let mut out = Vec::with_capacity(batch.len());
    for (sup, bat) in support.layers.iter().zip(batch) {
        let channels = sup.mean.len();
        let mut mean = Vec::with_capacity(channels);
        let mut var = Vec::with_capacity(channels);
        for c in 0..channels {
            mean.push(lam * sup.mean[c] + (1.0 - lam) * bat.mean[c]);
            var.push(lam * sup.var[c] + (1.0 - lam) * bat.var[c]);
        }
        out.push(LayerStats { mean, var });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::init_coefficients;
    use domain_data::{gen_source, DataConfig};
    use nn_engine::{ModelParams, ModelSpec, RngStream};

    fn model() -> (ModelSpec, ModelParams) {
        let spec = ModelSpec::micro_cnn(5);
        let params = ModelParams::init(&spec, &mut RngStream::new(42));
        (spec, params)
    }

    fn stats(mean: f32, var: f32) -> LayerStats {
        LayerStats {
            mean: vec![mean; 3],
            var: vec![var; 3],
        }
    }

    #[test]
    fn mix_identity_cases() {
        let src = vec![stats(0.5, 2.0)];
        let tgt = vec![stats(-1.0, 4.0)];
        let eff = mix_statistics(&src, &tgt, &init_coefficients(1, 0.0).unwrap()).unwrap();
        assert_eq!(eff.layers[0], src[0]);
        let eff = mix_statistics(&src, &tgt, &init_coefficients(1, 1.0).unwrap()).unwrap();
        assert_eq!(eff.layers[0], tgt[0]);
    }

    #[test]
    fn mix_hand_arithmetic_and_mismatch() {
        let src = vec![stats(0.0, 1.0)];
        let tgt = vec![stats(2.0, 3.0)];
        let eff = mix_statistics(&src, &tgt, &init_coefficients(1, 0.5).unwrap()).unwrap();
        assert!((eff.layers[0].mean[0] - 1.0).abs() < 1e-7);
        assert!((eff.layers[0].var[0] - 2.0).abs() < 1e-7);
        assert!(mix_statistics(&src, &tgt, &init_coefficients(2, 0.5).unwrap()).is_err());
    }

    #[test]
    fn mixed_variance_is_floored() {
        let src = vec![stats(0.0, 1.0)];
        let tgt = vec![stats(0.0, 1.0)];
        let mut coeffs = init_coefficients(1, 0.0).unwrap();
        coeffs.layers[0] = [0.0, 0.0, -1.0, 0.0];
        let eff = mix_statistics(&src, &tgt, &coeffs).unwrap();
        assert!(eff.layers[0].var.iter().all(|&v| v == VAR_FLOOR));
    }

    #[test]
    fn stochastic_pass_through_and_blend() {
        let support = SupportStats {
            layers: vec![stats(4.0, 2.0)],
            sample_count: 10,
        };
        let batch = vec![stats(0.0, 6.0)];
        let out = stochastic_target_stats(&support, &batch, None).unwrap();
        assert_eq!(out, support.layers);
        let out = stochastic_target_stats(&support, &batch, Some(1.0)).unwrap();
        assert_eq!(out, support.layers);
        let out = stochastic_target_stats(&support, &batch, Some(0.25)).unwrap();
        assert!((out[0].mean[0] - 1.0).abs() < 1e-7);
        assert!((out[0].var[0] - 5.0).abs() < 1e-7);
    }

    #[test]
    fn capture_rejects_empty_support() {
        let (spec, params) = model();
        let none = Dataset {
            images: Tensor::zeros(&[1, 1, 16, 16]),
            labels: Vec::new(),
        };
        assert!(capture_support_stats(&spec, &params, &none).is_err());
    }

    #[test]
    fn single_constant_image_has_flat_first_layer_stats() {
        let (spec, params) = model();
        let img = Tensor::full(&[1, 1, 16, 16], 0.7);
        let support = Dataset::new(img, vec![0]).unwrap();
        let stats = capture_support_stats(&spec, &params, &support).unwrap();
        // a padding-free conv maps a constant image to a constant activation
        // map, so the recorded spatial variance collapses to zero
        let conv = &params.convs[0];
        let act = conv2d(&support.images, &conv.weight, &conv.bias, 1, 0).unwrap();
        let (mean, var) = batch_moments(&act).unwrap();
        assert_eq!(stats.layers[0].mean, mean);
        assert_eq!(stats.layers[0].var, var);
        for (c, &v) in var.iter().enumerate() {
            assert!(v.abs() < 1e-9, "channel {c}: variance {v}");
        }
    }

    #[test]
    fn first_layer_stats_pool_across_halves() {
        let cfg = DataConfig {
            train_size: 40,
            test_size: 40,
            ..DataConfig::default()
        };
        let (_, test, _) = gen_source(&cfg).unwrap();
        let (spec, params) = model();
        let idx_a: Vec<usize> = (0..20).collect();
        let idx_b: Vec<usize> = (20..40).collect();
        let (img_a, lab_a) = test.batch(&idx_a);
        let (img_b, lab_b) = test.batch(&idx_b);
        let half_a =
            capture_support_stats(&spec, &params, &Dataset::new(img_a, lab_a).unwrap()).unwrap();
        let half_b =
            capture_support_stats(&spec, &params, &Dataset::new(img_b, lab_b).unwrap()).unwrap();
        let full = capture_support_stats(&spec, &params, &test).unwrap();
        // pooled-moments oracle at the first BN layer: the full-set mean is
        // the sample-count-weighted mean of the half-set means (deeper layers
        // see differently normalized inputs, so pooling applies to layer 0)
        for c in 0..full.layers[0].mean.len() {
            let pooled = 0.5 * (half_a.layers[0].mean[c] + half_b.layers[0].mean[c]);
            assert!(
                (full.layers[0].mean[c] - pooled).abs() < 1e-4,
                "channel {c}: {} vs {pooled}",
                full.layers[0].mean[c]
            );
        }
    }

    #[test]
    fn in_distribution_support_matches_running_stats() {
        // Train-free check: seed running stats from a large capture, then a
        // disjoint support drawn from the same distribution must land within
        // 3 standard errors on the first layer.
        let cfg = DataConfig {
            train_size: 2000,
            test_size: 1000,
            ..DataConfig::default()
        };
        let (train, test, _) = gen_source(&cfg).unwrap();
        let (spec, mut params) = model();
        let big = capture_support_stats(&spec, &params, &train).unwrap();
        for (bn, s) in params.bns.iter_mut().zip(&big.layers) {
            bn.running_mean = s.mean.clone();
            bn.running_var = s.var.clone();
        }
        let support = capture_support_stats(&spec, &params, &test).unwrap();
        let m = (test.len() * 16 * 16) as f32;
        for c in 0..8 {
            let se = (big.layers[0].var[c] / m).sqrt();
            let diff = (support.layers[0].mean[c] - big.layers[0].mean[c]).abs();
            assert!(diff < 3.0 * se + 1e-4, "channel {c}: diff {diff}, se {se}");
        }
    }

    use nn_engine::Tensor;
}
