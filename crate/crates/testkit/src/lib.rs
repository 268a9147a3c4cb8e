//! Test-only 64-bit reference implementation of the feature extractor and
//! loss, plus central-difference helpers. Kept independent of the engine's
//! forward/backward code paths so it can serve as a gradient oracle.

use nn_engine::{LayerDesc, ModelParams, ModelSpec, Tensor};

/// f64 copy of one BN layer's parameters and running statistics.
#[derive(Debug, Clone)]
pub struct RefBn {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// f64 copy of the trainable state, in engine layer order.
#[derive(Debug, Clone)]
pub struct RefParams {
    /// Per conv layer: weight values, weight shape, bias values.
    pub convs: Vec<(Vec<f64>, Vec<usize>, Vec<f64>)>,
    pub bns: Vec<RefBn>,
    /// Row-major [classes, feature_dim].
    pub prototypes: Vec<f64>,
}

fn widen(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

impl RefParams {
    pub fn from_engine(params: &ModelParams) -> Self {
        Self {
            convs: params
                .convs
                .iter()
                .map(|c| (widen(&c.weight), c.weight.shape().to_vec(), widen(&c.bias)))
                .collect(),
            bns: params
                .bns
                .iter()
                .map(|b| RefBn {
                    gamma: b.gamma.iter().map(|&v| v as f64).collect(),
                    beta: b.beta.iter().map(|&v| v as f64).collect(),
                    running_mean: b.running_mean.iter().map(|&v| v as f64).collect(),
                    running_var: b.running_var.iter().map(|&v| v as f64).collect(),
                })
                .collect(),
            prototypes: widen(&params.prototypes),
        }
    }

    /// Trainable parameters as one flat vector: per conv weight then bias,
    /// per BN gamma then beta, then prototypes.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, _, b) in &self.convs {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        for bn in &self.bns {
            out.extend_from_slice(&bn.gamma);
            out.extend_from_slice(&bn.beta);
        }
        out.extend_from_slice(&self.prototypes);
        out
    }

    /// Inverse of [`flatten`](Self::flatten); running statistics keep their
    /// current values.
    pub fn unflatten(&self, flat: &[f64]) -> Self {
        let mut p = self.clone();
        let mut i = 0;
        let mut take = |n: usize| {
            let s = &flat[i..i + n];
            i += n;
            s.to_vec()
        };
        for (w, _, b) in &mut p.convs {
            let nw = w.len();
            let nb = b.len();
            *w = take(nw);
            *b = take(nb);
        }
        for bn in &mut p.bns {
            let n = bn.gamma.len();
            bn.gamma = take(n);
            bn.beta = take(n);
        }
        let np = p.prototypes.len();
        p.prototypes = take(np);
        assert_eq!(i, flat.len(), "flat length mismatch");
        p
    }
}

/// Statistics source for the BN layers of the reference forward pass.
pub enum StatsMode<'a> {
    /// Per-channel moments of the current mini-batch, recomputed per layer.
    Batch,
    /// Externally fixed per-layer (mean, var) pairs, one per BN layer.
    Fixed(&'a [(Vec<f64>, Vec<f64>)]),
}

fn conv2d_ref(
    input: &[f64],
    in_shape: (usize, usize, usize, usize),
    weight: &[f64],
    w_shape: &[usize],
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> (Vec<f64>, (usize, usize, usize, usize)) {
    let (n, cin, h, w) = in_shape;
    let (oc, ic, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
    assert_eq!(cin, ic);
    let ho = (h + 2 * padding - kh) / stride + 1;
    let wo = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0f64; n * oc * ho * wo];
    for b_i in 0..n {
        for o in 0..oc {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[o];
                    for c in 0..ic {
                        for ky in 0..kh {
                            let iy = oy * stride + ky;
                            if iy < padding || iy >= h + padding {
                                continue;
                            }
                            let iy = iy - padding;
                            for kx in 0..kw {
                                let ix = ox * stride + kx;
                                if ix < padding || ix >= w + padding {
                                    continue;
                                }
                                let ix = ix - padding;
                                acc += weight[((o * ic + c) * kh + ky) * kw + kx]
                                    * input[((b_i * cin + c) * h + iy) * w + ix];
                            }
                        }
                    }
                    out[((b_i * oc + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, (n, oc, ho, wo))
}

fn channel_moments(x: &[f64], shape: (usize, usize, usize, usize)) -> (Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = shape;
    let count = (n * h * w) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for b in 0..n {
            for p in 0..h * w {
                sum += x[(b * c + ch) * h * w + p];
            }
        }
        mean[ch] = sum / count;
        let mut sq = 0.0;
        for b in 0..n {
            for p in 0..h * w {
                let d = x[(b * c + ch) * h * w + p] - mean[ch];
                sq += d * d;
            }
        }
        var[ch] = sq / count;
    }
    (mean, var)
}

/// Mean cross-entropy of the reference network on a batch, computed entirely
/// in f64. `images` is row-major [n, c, h, w] matching `spec.input`.
pub fn ref_loss(
    spec: &ModelSpec,
    params: &RefParams,
    images: &[f64],
    n: usize,
    labels: &[u16],
    mode: StatsMode,
) -> f64 {
    ref_loss_impl(spec, params, images, n, labels, mode, None, None)
}

/// ReLU activation pattern at a reference forward pass: one bool per element
/// per ReLU layer, true where the pre-activation is strictly positive.
pub fn capture_relu_masks(
    spec: &ModelSpec,
    params: &RefParams,
    images: &[f64],
    n: usize,
    labels: &[u16],
    mode: StatsMode,
) -> Vec<Vec<bool>> {
    let mut masks = Vec::new();
    ref_loss_impl(spec, params, images, n, labels, mode, None, Some(&mut masks));
    masks
}

/// [`ref_loss`] with the ReLU layers replaced by multiplication with a fixed
/// activation mask. Finite differences of this smooth linearization estimate
/// the one-sided derivative that reverse-mode differentiation computes; exact
/// ReLU would put kink crossings inside every probe interval once batch
/// normalization centers the pre-activations at zero.
pub fn ref_loss_frozen(
    spec: &ModelSpec,
    params: &RefParams,
    images: &[f64],
    n: usize,
    labels: &[u16],
    mode: StatsMode,
    masks: &[Vec<bool>],
) -> f64 {
    ref_loss_impl(spec, params, images, n, labels, mode, Some(masks), None)
}

#[allow(clippy::too_many_arguments)]
fn ref_loss_impl(
    spec: &ModelSpec,
    params: &RefParams,
    images: &[f64],
    n: usize,
    labels: &[u16],
    mode: StatsMode,
    frozen: Option<&[Vec<bool>]>,
    mut record: Option<&mut Vec<Vec<bool>>>,
) -> f64 {
    let (c0, h0, w0) = spec.input;
    assert_eq!(images.len(), n * c0 * h0 * w0);
    let mut cur = images.to_vec();
    let mut shape = (n, c0, h0, w0);
    let mut conv_i = 0;
    let mut bn_i = 0;
    let mut relu_i = 0;
    let mut features: Option<Vec<f64>> = None;
    for layer in &spec.layers {
        match *layer {
            LayerDesc::Conv2d {
                stride, padding, ..
            } => {
                let (w, ws, b) = &params.convs[conv_i];
                let (out, os) = conv2d_ref(&cur, shape, w, ws, b, stride, padding);
                cur = out;
                shape = os;
                conv_i += 1;
            }
            LayerDesc::BatchNorm { eps, .. } => {
                let (mean, var) = match mode {
                    StatsMode::Batch => channel_moments(&cur, shape),
                    StatsMode::Fixed(stats) => stats[bn_i].clone(),
                };
                let bn = &params.bns[bn_i];
                let (_, c, h, w) = shape;
                for b in 0..shape.0 {
                    for ch in 0..c {
                        let inv = 1.0 / (var[ch] + eps as f64).sqrt();
                        for p in 0..h * w {
                            let i = (b * c + ch) * h * w + p;
                            cur[i] = (cur[i] - mean[ch]) * inv * bn.gamma[ch] + bn.beta[ch];
                        }
                    }
                }
                bn_i += 1;
            }
            LayerDesc::Relu => {
                match frozen {
                    Some(masks) => {
                        for (v, &keep) in cur.iter_mut().zip(&masks[relu_i]) {
                            if !keep {
                                *v = 0.0;
                            }
                        }
                    }
                    None => {
                        if let Some(rec) = record.as_deref_mut() {
                            rec.push(cur.iter().map(|&v| v > 0.0).collect());
                        }
                        for v in cur.iter_mut() {
                            if *v < 0.0 {
                                *v = 0.0;
                            }
                        }
                    }
                }
                relu_i += 1;
            }
            LayerDesc::GlobalAvgPool => {
                let (nb, c, h, w) = shape;
                let mut f = vec![0.0f64; nb * c];
                for b in 0..nb {
                    for ch in 0..c {
                        let mut sum = 0.0;
                        for p in 0..h * w {
                            sum += cur[(b * c + ch) * h * w + p];
                        }
                        f[b * c + ch] = sum / (h * w) as f64;
                    }
                }
                features = Some(f);
            }
        }
    }
    let features = features.expect("model ends in global-avg-pool");
    let d = spec.feature_dim;
    let tau = spec.temperature as f64;
    let mut total = 0.0f64;
    for b in 0..n {
        let mut logits = vec![0.0f64; spec.classes];
        for k in 0..spec.classes {
            let mut dist = 0.0;
            for j in 0..d {
                let diff = features[b * d + j] - params.prototypes[k * d + j];
                dist += diff * diff;
            }
            logits[k] = -dist / tau;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse: f64 = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
        total += lse - logits[labels[b] as usize];
    }
    total / n as f64
}

/// Central finite difference of `f` at `x` with step `h` per coordinate.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0f64; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Compare an analytic gradient against a finite-difference gradient.
/// Entries must agree to `rel_tol` relative error, except near zero where
/// `abs_tol` absolute error applies. Returns the first violation.
pub fn check_gradients(
    analytic: &[f32],
    fd: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<(), String> {
    assert_eq!(analytic.len(), fd.len(), "gradient length mismatch");
    for (i, (&a, &g)) in analytic.iter().zip(fd).enumerate() {
        let a = a as f64;
        if (a - g).abs() <= abs_tol {
            continue;
        }
        let rel = (a - g).abs() / a.abs().max(g.abs());
        if rel > rel_tol {
            return Err(format!(
                "gradient {i}: analytic {a:.6e} vs finite-difference {g:.6e} (rel {rel:.3e})"
            ));
        }
    }
    Ok(())
}
