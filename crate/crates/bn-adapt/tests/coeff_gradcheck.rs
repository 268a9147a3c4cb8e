//! Coefficient gradients against central finite differences of the 64-bit
//! reference network: the chain through the statistics mix is exercised
//! end to end, from the loss down to the 4 scalars per BN layer.

use bn_adapt::{coeff_gradients, mix_statistics, LccsCoefficients};
use nn_engine::{
    backward, cross_entropy, forward, LayerStats, Mode, ModelParams, ModelSpec, RngStream, Tensor,
};
use testkit::{capture_relu_masks, central_diff, check_gradients, ref_loss_frozen, RefParams, StatsMode};

#[test]
fn coefficient_gradients_match_finite_differences() {
    let spec = ModelSpec::micro_cnn(5);
    let mut rng = RngStream::new(21);
    let mut params = ModelParams::init(&spec, &mut rng);
    for v in params.prototypes.data_mut() {
        *v = (0.3 * rng.normal()) as f32;
    }
    let n = 8;
    let (c, h, w) = spec.input;
    let pixels: Vec<f32> = (0..n * c * h * w).map(|_| rng.normal() as f32).collect();
    let images = Tensor::new(vec![n, c, h, w], pixels).unwrap();
    let labels: Vec<u16> = (0..n).map(|_| rng.index(spec.classes) as u16).collect();

    // source stats from the running values, target stats offset from them
    let src: Vec<LayerStats> = spec
        .bn_channels()
        .iter()
        .map(|&ch| LayerStats {
            mean: vec![0.0; ch],
            var: vec![1.0; ch],
        })
        .collect();
    let tgt: Vec<LayerStats> = spec
        .bn_channels()
        .iter()
        .map(|&ch| LayerStats {
            mean: (0..ch).map(|_| (0.3 * rng.normal()) as f32).collect(),
            var: (0..ch).map(|_| rng.uniform(0.5, 1.5) as f32).collect(),
        })
        .collect();
    let coeffs = LccsCoefficients {
        layers: vec![[0.7, 0.3, 0.6, 0.4], [0.5, 0.5, 0.8, 0.2], [0.9, 0.1, 0.4, 0.6]],
    };

    let eff = mix_statistics(&src, &tgt, &coeffs).unwrap();
    let (_, logits, cache) = forward(&spec, &params, &images, Mode::Adapt, Some(&eff)).unwrap();
    let (_, dlogits) = cross_entropy(&logits, &labels).unwrap();
    let grads = backward(&spec, &params, &cache, &dlogits).unwrap();
    let stats_grads = grads.bn_stats.as_ref().unwrap();
    let analytic: Vec<f32> = coeff_gradients(&src, &tgt, &eff, stats_grads)
        .unwrap()
        .into_iter()
        .flatten()
        .collect();

    // finite differences over the 12 coefficients, mixing done in f64
    let base = RefParams::from_engine(&params);
    let x64: Vec<f64> = images.data().iter().map(|&v| v as f64).collect();
    let mix64 = |flat: &[f64]| -> Vec<(Vec<f64>, Vec<f64>)> {
        src.iter()
            .zip(&tgt)
            .enumerate()
            .map(|(l, (s, t))| {
                let c = &flat[l * 4..l * 4 + 4];
                let mean = s
                    .mean
                    .iter()
                    .zip(&t.mean)
                    .map(|(&sm, &tm)| c[0] * sm as f64 + c[1] * tm as f64)
                    .collect();
                let var = s
                    .var
                    .iter()
                    .zip(&t.var)
                    .map(|(&sv, &tv)| c[2] * sv as f64 + c[3] * tv as f64)
                    .collect();
                (mean, var)
            })
            .collect()
    };
    let flat0: Vec<f64> = coeffs.flat().iter().map(|&v| v as f64).collect();
    let fixed0 = mix64(&flat0);
    let masks = capture_relu_masks(&spec, &base, &x64, n, &labels, StatsMode::Fixed(&fixed0));
    let fd = central_diff(
        |flat| {
            let fixed = mix64(flat);
            ref_loss_frozen(&spec, &base, &x64, n, &labels, StatsMode::Fixed(&fixed), &masks)
        },
        &flat0,
        1e-3,
    );
    check_gradients(&analytic, &fd, 1e-3, 1e-6).unwrap();
}
