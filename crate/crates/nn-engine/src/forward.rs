//! Forward and reverse passes through the fixed layer sequence.

use crate::error::{NnError, Result};
use crate::ops::{batch_moments, bn_forward, conv2d, global_avg_pool, nearest_centroid_logits};
use crate::params::{GradientSet, ModelParams, StatsGrad};
use crate::spec::{LayerDesc, ModelSpec};
use crate::tensor::Tensor;

/// Which BN statistics the forward pass uses.
///
/// * `TrainServer` — batch statistics; the cache records them so the caller
///   can fold them into the running estimates.
/// * `Eval` — the stored running statistics.
/// * `Adapt` — externally supplied effective statistics, used verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    TrainServer,
    Eval,
    Adapt,
}

/// Per-channel mean/variance for one BN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// The statistics fed to each BN layer in adapt mode.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveStats {
    pub layers: Vec<LayerStats>,
}

#[derive(Debug)]
enum CacheEntry {
    Conv {
        input: Tensor,
    },
    Bn {
        input: Tensor,
        mean: Vec<f32>,
        var: Vec<f32>,
        batch_mode: bool,
    },
    Relu {
        input: Tensor,
    },
    Gap {
        in_shape: Vec<usize>,
    },
}

/// Activations and statistics recorded by `forward` for the backward pass.
#[derive(Debug)]
pub struct ForwardCache {
    mode: Mode,
    entries: Vec<CacheEntry>,
    features: Tensor,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Batch statistics observed at each BN layer (train-server mode).
    pub fn bn_batch_stats(&self) -> Vec<LayerStats> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                CacheEntry::Bn { mean, var, .. } => Some(LayerStats {
                    mean: mean.clone(),
                    var: var.clone(),
                }),
                _ => None,
            })
            .collect()
    }
}

/// Run the model. Returns (features, logits, cache).
pub fn forward(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &Tensor,
    mode: Mode,
    stats_override: Option<&EffectiveStats>,
) -> Result<(Tensor, Tensor, ForwardCache)> {
    batch.expect_rank(4, "forward input")?;
    let over = match (mode, stats_override) {
        (Mode::Adapt, Some(o)) => {
            if o.layers.len() != spec.n_bn_layers() {
                return Err(NnError::InvalidState(format!(
                    "stats override covers {} BN layers, model has {}",
                    o.layers.len(),
                    spec.n_bn_layers()
                )));
            }
            Some(o)
        }
        (Mode::Adapt, None) => {
            return Err(NnError::InvalidState(
                "adapt mode requires effective statistics for every BN layer".into(),
            ))
        }
        (_, _) => None,
    };

    let mut entries = Vec::with_capacity(spec.layers.len());
    let mut cur = batch.clone();
    let (mut ci, mut bi) = (0usize, 0usize);
    for layer in &spec.layers {
        match *layer {
            LayerDesc::Conv2d { stride, padding, .. } => {
                let conv = &params.convs[ci];
                let out = conv2d(&cur, &conv.weight, &conv.bias, stride, padding)?;
                entries.push(CacheEntry::Conv { input: cur });
                cur = out;
                ci += 1;
            }
            LayerDesc::BatchNorm { eps, .. } => {
                let bn = &params.bns[bi];
                let (mean, var, batch_mode) = match mode {
                    Mode::TrainServer => {
                        let (m, v) = batch_moments(&cur)?;
                        (m, v, true)
                    }
                    Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone(), false),
                    Mode::Adapt => {
                        let s = &over.unwrap().layers[bi];
                        (s.mean.clone(), s.var.clone(), false)
                    }
                };
                let out = bn_forward(&cur, &mean, &var, &bn.gamma, &bn.beta, eps)?;
                entries.push(CacheEntry::Bn {
                    input: cur,
                    mean,
                    var,
                    batch_mode,
                });
                cur = out;
                bi += 1;
            }
            LayerDesc::Relu => {
                let out = crate::ops::relu(&cur);
                entries.push(CacheEntry::Relu { input: cur });
                cur = out;
            }
            LayerDesc::GlobalAvgPool => {
                let out = global_avg_pool(&cur)?;
                entries.push(CacheEntry::Gap {
                    in_shape: cur.shape().to_vec(),
                });
                cur = out;
            }
        }
    }
    let features = cur;
    let logits = nearest_centroid_logits(&features, &params.prototypes, spec.temperature)?;
    let cache = ForwardCache {
        mode,
        entries,
        features: features.clone(),
    };
    Ok((features, logits, cache))
}

/// Reverse pass. Produces gradients for conv weights/biases, BN affine,
/// prototypes, and — in adapt mode — the effective-statistics gradients.
pub fn backward(
    spec: &ModelSpec,
    params: &ModelParams,
    cache: &ForwardCache,
    dlogits: &Tensor,
) -> Result<GradientSet> {
    if cache.entries.len() != spec.layers.len() {
        return Err(NnError::InvalidState(
            "forward cache does not match model spec".into(),
        ));
    }
    let (n, f) = (cache.features.dim(0), cache.features.dim(1));
    let l = spec.classes;
    if dlogits.shape() != [n, l] {
        return Err(NnError::InvalidState("dlogits shape mismatch".into()));
    }

    // Head: logit[n,c] = -||feat_n - proto_c||^2 / tau
    let tau = spec.temperature;
    let fd = cache.features.data();
    let pd = params.prototypes.data();
    let dd = dlogits.data();
    let mut dfeat = Tensor::zeros(&[n, f]);
    let mut dproto = Tensor::zeros(&[l, f]);
    {
        let dfd = dfeat.data_mut();
        let dpd = dproto.data_mut();
        for ni in 0..n {
            for li in 0..l {
                let g = dd[ni * l + li] * 2.0 / tau;
                if g == 0.0 {
                    continue;
                }
                for fi in 0..f {
                    let diff = fd[ni * f + fi] - pd[li * f + fi];
                    dfd[ni * f + fi] -= g * diff;
                    dpd[li * f + fi] += g * diff;
                }
            }
        }
    }

    let mut conv_w = Vec::new();
    let mut conv_b = Vec::new();
    let mut bn_gamma = Vec::new();
    let mut bn_beta = Vec::new();
    let mut bn_stats = Vec::new();
    let adapt = cache.mode == Mode::Adapt;

    let mut dcur = dfeat;
    let mut ci = params.convs.len();
    let mut bi = params.bns.len();
    for (layer, entry) in spec.layers.iter().zip(&cache.entries).rev() {
        match (layer, entry) {
            (LayerDesc::Conv2d { stride, padding, .. }, CacheEntry::Conv { input }) => {
                ci -= 1;
                let conv = &params.convs[ci];
                let (dx, dw, db) = conv_backward(input, &conv.weight, &dcur, *stride, *padding);
                conv_w.push(dw);
                conv_b.push(db);
                dcur = dx;
            }
            (
                LayerDesc::BatchNorm { eps, .. },
                CacheEntry::Bn {
                    input,
                    mean,
                    var,
                    batch_mode,
                },
            ) => {
                bi -= 1;
                let bn = &params.bns[bi];
                let out = bn_backward(input, mean, var, &bn.gamma, *eps, &dcur, *batch_mode);
                bn_gamma.push(out.dgamma);
                bn_beta.push(out.dbeta);
                if adapt {
                    bn_stats.push(StatsGrad {
                        dmean: out.dmean,
                        dvar: out.dvar,
                    });
                }
                dcur = out.dx;
            }
            (LayerDesc::Relu, CacheEntry::Relu { input }) => {
                let xd = input.data();
                for (g, &x) in dcur.data_mut().iter_mut().zip(xd) {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            (LayerDesc::GlobalAvgPool, CacheEntry::Gap { in_shape }) => {
                let (nn, cc, hh, ww) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
                let scale = 1.0 / (hh * ww) as f32;
                let dprev = dcur;
                let dpd = dprev.data();
                let mut dx = Tensor::zeros(in_shape);
                let dxd = dx.data_mut();
                for ni in 0..nn {
                    for cj in 0..cc {
                        let g = dpd[ni * cc + cj] * scale;
                        let base = (ni * cc + cj) * hh * ww;
                        for v in &mut dxd[base..base + hh * ww] {
                            *v = g;
                        }
                    }
                }
                dcur = dx;
            }
            _ => {
                return Err(NnError::InvalidState(
                    "forward cache entries out of order for this spec".into(),
                ))
            }
        }
    }
    conv_w.reverse();
    conv_b.reverse();
    bn_gamma.reverse();
    bn_beta.reverse();
    bn_stats.reverse();

    Ok(GradientSet {
        conv_w,
        conv_b,
        bn_gamma,
        bn_beta,
        prototypes: dproto,
        bn_stats: if adapt { Some(bn_stats) } else { None },
    })
}

/// Fold the batch statistics recorded by a train-server forward pass into
/// the running estimates: new = (1 - m)*old + m*batch.
pub fn update_running_stats(
    spec: &ModelSpec,
    params: &mut ModelParams,
    cache: &ForwardCache,
) -> Result<()> {
    if cache.mode != Mode::TrainServer {
        return Err(NnError::InvalidState(
            "running statistics update requires a train-server forward cache".into(),
        ));
    }
    let batch = cache.bn_batch_stats();
    if batch.len() != params.bns.len() {
        return Err(NnError::InvalidState("cache/spec mismatch".into()));
    }
    let momenta: Vec<f32> = spec
        .layers
        .iter()
        .filter_map(|l| match l {
            LayerDesc::BatchNorm { momentum, .. } => Some(*momentum),
            _ => None,
        })
        .collect();
    for ((bn, stats), m) in params.bns.iter_mut().zip(&batch).zip(&momenta) {
        for c in 0..bn.running_mean.len() {
            bn.running_mean[c] = (1.0 - m) * bn.running_mean[c] + m * stats.mean[c];
            bn.running_var[c] = (1.0 - m) * bn.running_var[c] + m * stats.var[c];
        }
    }
    Ok(())
}

fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    padding: usize,
) -> (Tensor, Tensor, Tensor) {
    let (n, c, h, wi) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (o, _, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    let (ho, wo) = (dy.dim(2), dy.dim(3));
    let xd = x.data();
    let wd = w.data();
    let dyd = dy.data();
    let mut dx = Tensor::zeros(&[n, c, h, wi]);
    let mut dw = Tensor::zeros(&[o, c, kh, kw]);
    let mut db = Tensor::zeros(&[o]);
    let dxd = dx.data_mut();
    let dwd = dw.data_mut();
    let dbd = db.data_mut();
    for ni in 0..n {
        for oi in 0..o {
            let w_base = oi * c * kh * kw;
            for oh in 0..ho {
                for ow in 0..wo {
                    let g = dyd[((ni * o + oi) * ho + oh) * wo + ow];
                    if g == 0.0 {
                        continue;
                    }
                    dbd[oi] += g;
                    for cj in 0..c {
                        let x_base = (ni * c + cj) * h * wi;
                        let wk_base = w_base + cj * kh * kw;
                        for khi in 0..kh {
                            let ih = oh * stride + khi;
                            if ih < padding || ih >= h + padding {
                                continue;
                            }
                            let ih = ih - padding;
                            for kwi in 0..kw {
                                let iw = ow * stride + kwi;
                                if iw < padding || iw >= wi + padding {
                                    continue;
                                }
                                let iw = iw - padding;
                                dwd[wk_base + khi * kw + kwi] += g * xd[x_base + ih * wi + iw];
                                dxd[x_base + ih * wi + iw] += g * wd[wk_base + khi * kw + kwi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

struct BnBackward {
    dx: Tensor,
    dgamma: Vec<f32>,
    dbeta: Vec<f32>,
    dmean: Vec<f32>,
    dvar: Vec<f32>,
}

fn bn_backward(
    x: &Tensor,
    mean: &[f32],
    var: &[f32],
    gamma: &[f32],
    eps: f32,
    dy: &Tensor,
    batch_mode: bool,
) -> BnBackward {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let plane = h * w;
    let m = (n * plane) as f64;
    let xd = x.data();
    let dyd = dy.data();
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let dxd = dx.data_mut();
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    let mut dmean = vec![0.0f32; c];
    let mut dvar = vec![0.0f32; c];
    for cj in 0..c {
        let s = ((var[cj] + eps) as f64).sqrt();
        let inv = 1.0 / s;
        let mu = mean[cj] as f64;
        let g = gamma[cj] as f64;
        // per-channel sums, f64 accumulation
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xc = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + cj) * plane;
            for i in 0..plane {
                let dyv = dyd[base + i] as f64;
                let xc = xd[base + i] as f64 - mu;
                sum_dy += dyv;
                sum_dy_xc += dyv * xc;
                sum_dy_xhat += dyv * xc * inv;
            }
        }
        dgamma[cj] = sum_dy_xhat as f32;
        dbeta[cj] = sum_dy as f32;
        let dvar_c = -0.5 * g * sum_dy_xc * inv * inv * inv;
        let dmean_c = -g * inv * sum_dy;
        dmean[cj] = dmean_c as f32;
        dvar[cj] = dvar_c as f32;
        if batch_mode {
            for ni in 0..n {
                let base = (ni * c + cj) * plane;
                for i in 0..plane {
                    let xc = xd[base + i] as f64 - mu;
                    let dxh = dyd[base + i] as f64 * g;
                    dxd[base + i] =
                        (dxh * inv + dvar_c * 2.0 * xc / m + dmean_c / m) as f32;
                }
            }
        } else {
            let scale = (g * inv) as f32;
            for ni in 0..n {
                let base = (ni * c + cj) * plane;
                for i in 0..plane {
                    dxd[base + i] = dyd[base + i] * scale;
                }
            }
        }
    }
    BnBackward {
        dx,
        dgamma,
        dbeta,
        dmean,
        dvar,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_batch(rng: &mut RngStream, n: usize, spec: &ModelSpec) -> Tensor {
        let (c, h, w) = spec.input;
        let data: Vec<f32> = (0..n * c * h * w).map(|_| rng.normal() as f32).collect();
        Tensor::new(vec![n, c, h, w], data).unwrap()
    }

    fn model(seed: u64) -> (ModelSpec, ModelParams) {
        let spec = ModelSpec::micro_cnn(5);
        let params = ModelParams::init(&spec, &mut RngStream::new(seed));
        (spec, params)
    }

    fn running_stats_override(params: &ModelParams) -> EffectiveStats {
        EffectiveStats {
            layers: params
                .bns
                .iter()
                .map(|b| LayerStats {
                    mean: b.running_mean.clone(),
                    var: b.running_var.clone(),
                })
                .collect(),
        }
    }

    #[test]
    fn adapt_with_running_stats_matches_eval() {
        let (spec, mut params) = model(1);
        let mut rng = RngStream::new(2);
        // make running stats non-trivial
        for bn in &mut params.bns {
            for v in &mut bn.running_mean {
                *v = rng.normal() as f32 * 0.1;
            }
            for v in &mut bn.running_var {
                *v = 0.5 + rng.next_f32();
            }
        }
        let proto: Vec<f32> = (0..5 * 32).map(|_| rng.normal() as f32).collect();
        params.prototypes = Tensor::new(vec![5, 32], proto).unwrap();
        let batch = random_batch(&mut rng, 4, &spec);
        let over = running_stats_override(&params);
        let (_, l_eval, _) = forward(&spec, &params, &batch, Mode::Eval, None).unwrap();
        let (_, l_adapt, _) = forward(&spec, &params, &batch, Mode::Adapt, Some(&over)).unwrap();
        assert_eq!(l_eval.data(), l_adapt.data());
    }

    #[test]
    fn eval_mode_is_pure() {
        let (spec, params) = model(3);
        let batch = random_batch(&mut RngStream::new(4), 3, &spec);
        let before = params.clone();
        let (_, l1, _) = forward(&spec, &params, &batch, Mode::Eval, None).unwrap();
        let (_, l2, _) = forward(&spec, &params, &batch, Mode::Eval, None).unwrap();
        assert_eq!(l1.data(), l2.data());
        assert_eq!(params, before);
    }

    #[test]
    fn adapt_without_override_is_invalid_state() {
        let (spec, params) = model(5);
        let batch = random_batch(&mut RngStream::new(6), 2, &spec);
        match forward(&spec, &params, &batch, Mode::Adapt, None) {
            Err(NnError::InvalidState(_)) => {}
            other => panic!("expected invalid-state, got {other:?}"),
        }
    }

    #[test]
    fn running_stat_update_hand_value() {
        // single conv+BN model; new_running = (1-m)*old + m*batch_stat
        let spec = ModelSpec {
            input: (1, 2, 2),
            layers: vec![
                LayerDesc::Conv2d {
                    in_ch: 1,
                    out_ch: 1,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                },
                LayerDesc::BatchNorm {
                    channels: 1,
                    eps: 1e-5,
                    momentum: 0.1,
                },
                LayerDesc::GlobalAvgPool,
            ],
            feature_dim: 1,
            classes: 2,
            temperature: 1.0,
        };
        spec.validate().unwrap();
        let mut params = ModelParams::init(&spec, &mut RngStream::new(7));
        params.convs[0].weight.data_mut()[0] = 1.0; // identity conv
        let batch = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        // batch mean 4, population variance 5
        let (_, _, cache) = forward(&spec, &params, &batch, Mode::TrainServer, None).unwrap();
        update_running_stats(&spec, &mut params, &cache).unwrap();
        assert!((params.bns[0].running_mean[0] - (0.9 * 0.0 + 0.1 * 4.0)).abs() < 1e-6);
        assert!((params.bns[0].running_var[0] - (0.9 * 1.0 + 0.1 * 5.0)).abs() < 1e-6);
    }

    #[test]
    fn zero_dlogits_gives_zero_gradients() {
        let (spec, params) = model(8);
        let batch = random_batch(&mut RngStream::new(9), 2, &spec);
        let (_, logits, cache) = forward(&spec, &params, &batch, Mode::TrainServer, None).unwrap();
        let dlogits = Tensor::zeros(logits.shape());
        let grads = backward(&spec, &params, &cache, &dlogits).unwrap();
        assert!(grads.conv_w.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(grads.prototypes.data().iter().all(|&v| v == 0.0));
        assert!(grads.bn_gamma.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_leaves_mean_gradients_unchanged() {
        let (spec, mut params) = model(10);
        let mut rng = RngStream::new(11);
        let proto: Vec<f32> = (0..5 * 32).map(|_| rng.normal() as f32).collect();
        params.prototypes = Tensor::new(vec![5, 32], proto).unwrap();
        let batch = random_batch(&mut rng, 4, &spec);
        let labels = [0u16, 1, 2, 3];
        let mut doubled = batch.data().to_vec();
        doubled.extend_from_slice(batch.data());
        let batch2 = Tensor::new(vec![8, 1, 16, 16], doubled).unwrap();
        let labels2 = [0u16, 1, 2, 3, 0, 1, 2, 3];

        let grads = |b: &Tensor, y: &[u16]| {
            let (_, logits, cache) = forward(&spec, &params, b, Mode::TrainServer, None).unwrap();
            let (_, d) = crate::ops::cross_entropy(&logits, y).unwrap();
            backward(&spec, &params, &cache, &d).unwrap()
        };
        let g1 = grads(&batch, &labels);
        let g2 = grads(&batch2, &labels2);
        for (a, b) in g1.conv_w.iter().zip(&g2.conv_w) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-5, "{x} vs {y}");
            }
        }
        for (x, y) in g1.prototypes.data().iter().zip(g2.prototypes.data()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn adapt_backward_reports_stats_gradients() {
        let (spec, params) = model(12);
        let batch = random_batch(&mut RngStream::new(13), 2, &spec);
        let over = running_stats_override(&params);
        let (_, logits, cache) = forward(&spec, &params, &batch, Mode::Adapt, Some(&over)).unwrap();
        let (_, d) = crate::ops::cross_entropy(&logits, &[0, 1]).unwrap();
        let grads = backward(&spec, &params, &cache, &d).unwrap();
        let stats = grads.bn_stats.expect("adapt mode exposes stats gradients");
        assert_eq!(stats.len(), 3);
        assert_eq!(stats[0].dmean.len(), 8);
        assert_eq!(stats[2].dvar.len(), 32);
    }
}
