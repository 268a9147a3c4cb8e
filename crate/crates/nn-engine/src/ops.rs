//! Layer primitives. All operations are pure; reductions accumulate in f64.

use crate::error::{invalid_arg, NnError, Result};
use crate::tensor::Tensor;

/// Direct cross-correlation with zero padding.
pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    x.expect_rank(4, "conv2d input")?;
    w.expect_rank(4, "conv2d weight")?;
    b.expect_rank(1, "conv2d bias")?;
    let (n, c, h, wi) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (o, wc, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    if wc != c {
        return invalid_arg(format!("conv2d: weight expects {wc} channels, input has {c}"));
    }
    if b.dim(0) != o {
        return invalid_arg("conv2d: bias length must equal output channels");
    }
    if stride == 0 {
        return invalid_arg("conv2d: stride must be positive");
    }
    if h + 2 * padding < kh || wi + 2 * padding < kw {
        return invalid_arg("conv2d: kernel larger than padded input");
    }
    let ho = (h + 2 * padding - kh) / stride + 1;
    let wo = (wi + 2 * padding - kw) / stride + 1;

    let mut out = Tensor::zeros(&[n, o, ho, wo]);
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let od = out.data_mut();
    for ni in 0..n {
        for oi in 0..o {
            let w_base = oi * c * kh * kw;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = bd[oi];
                    for ci in 0..c {
                        let x_base = ((ni * c + ci) * h) * wi;
                        let wk_base = w_base + ci * kh * kw;
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
                                acc += xd[x_base + ih * wi + iw] * wd[wk_base + khi * kw + kwi];
                            }
                        }
                    }
                    od[((ni * o + oi) * ho + oh) * wo + ow] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Per-channel mean and population (biased) variance over the N, H, W axes.
pub fn batch_moments(x: &Tensor) -> Result<(Vec<f32>, Vec<f32>)> {
    x.expect_rank(4, "batch_moments input")?;
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let m = n * h * w;
    if m == 0 {
        return invalid_arg("batch_moments: empty batch");
    }
    let xd = x.data();
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    let plane = h * w;
    for ci in 0..c {
        let mut sum = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for &v in &xd[base..base + plane] {
                sum += v as f64;
            }
        }
        let mu = sum / m as f64;
        let mut sq = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for &v in &xd[base..base + plane] {
                let d = v as f64 - mu;
                sq += d * d;
            }
        }
        mean[ci] = mu as f32;
        var[ci] = (sq / m as f64) as f32;
    }
    Ok((mean, var))
}

/// y = gamma*(x - mean)/sqrt(var + eps) + beta, per channel.
pub fn bn_forward(
    x: &Tensor,
    mean: &[f32],
    var: &[f32],
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
) -> Result<Tensor> {
    x.expect_rank(4, "bn_forward input")?;
    let c = x.dim(1);
    if [mean.len(), var.len(), gamma.len(), beta.len()] != [c, c, c, c] {
        return invalid_arg("bn_forward: channel vector length mismatch");
    }
    if var.iter().any(|&v| v < 0.0) {
        return invalid_arg("bn_forward: negative variance");
    }
    let (n, h, w) = (x.dim(0), x.dim(2), x.dim(3));
    let plane = h * w;
    let mut out = x.clone();
    let od = out.data_mut();
    for ci in 0..c {
        let inv = 1.0 / (var[ci] + eps).sqrt();
        let (g, b, mu) = (gamma[ci], beta[ci], mean[ci]);
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for v in &mut od[base..base + plane] {
                *v = g * (*v - mu) * inv + b;
            }
        }
    }
    Ok(out)
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// [N,C,H,W] -> [N,C] spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(4, "global_avg_pool input")?;
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let plane = h * w;
    let xd = x.data();
    let mut out = Tensor::zeros(&[n, c]);
    let od = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let sum: f64 = xd[base..base + plane].iter().map(|&v| v as f64).sum();
            od[ni * c + ci] = (sum / plane as f64) as f32;
        }
    }
    Ok(out)
}

/// logit[n,c] = -||features[n] - prototypes[c]||^2 / tau
pub fn nearest_centroid_logits(features: &Tensor, prototypes: &Tensor, tau: f32) -> Result<Tensor> {
    features.expect_rank(2, "features")?;
    prototypes.expect_rank(2, "prototypes")?;
    if !(tau > 0.0) {
        return invalid_arg("temperature must be positive");
    }
    let (n, f) = (features.dim(0), features.dim(1));
    let (l, pf) = (prototypes.dim(0), prototypes.dim(1));
    if pf != f {
        return invalid_arg("feature dimension does not match prototypes");
    }
    let fd = features.data();
    let pd = prototypes.data();
    let mut out = Tensor::zeros(&[n, l]);
    let od = out.data_mut();
    for ni in 0..n {
        for li in 0..l {
            let mut d2 = 0.0f32;
            for fi in 0..f {
                let d = fd[ni * f + fi] - pd[li * f + fi];
                d2 += d * d;
            }
            od[ni * l + li] = -d2 / tau;
        }
    }
    Ok(out)
}

/// Mean softmax cross-entropy with max-subtraction stabilization.
/// Returns the loss and dloss/dlogits = (softmax - onehot)/N.
pub fn cross_entropy(logits: &Tensor, labels: &[u16]) -> Result<(f32, Tensor)> {
    logits.expect_rank(2, "logits")?;
    let (n, l) = (logits.dim(0), logits.dim(1));
    if labels.len() != n {
        return invalid_arg("label count does not match batch size");
    }
    if let Some(&bad) = labels.iter().find(|&&y| y as usize >= l) {
        return Err(NnError::InvalidArgument(format!(
            "label {bad} out of range for {l} classes"
        )));
    }
    let ld = logits.data();
    let mut dlogits = Tensor::zeros(&[n, l]);
    let dd = dlogits.data_mut();
    let mut loss = 0.0f64;
    for ni in 0..n {
        let row = &ld[ni * l..(ni + 1) * l];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut z = 0.0f64;
        for &v in row {
            z += ((v - max) as f64).exp();
        }
        let y = labels[ni] as usize;
        loss += z.ln() - (row[y] - max) as f64;
        for li in 0..l {
            let p = ((row[li] - max) as f64).exp() / z;
            let onehot = if li == y { 1.0 } else { 0.0 };
            dd[ni * l + li] = ((p - onehot) / n as f64) as f32;
        }
    }
    Ok(((loss / n as f64) as f32, dlogits))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f32>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn conv_1x1_identity() {
        let x = t(&[1, 1, 3, 3], (0..9).map(|v| v as f32).collect());
        let w = t(&[1, 1, 1, 1], vec![1.0]);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_all_ones_on_constant() {
        let c = 2.5f32;
        let x = Tensor::full(&[1, 1, 5, 5], c);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        for &v in y.data() {
            assert!((v - 9.0 * c).abs() < 1e-5);
        }
    }

    #[test]
    fn conv_rejects_shape_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[3, 1, 3, 3]);
        let b = Tensor::zeros(&[3]);
        assert!(conv2d(&x, &w, &b, 1, 1).is_err());
    }

    #[test]
    fn moments_constant_input() {
        let x = Tensor::full(&[2, 3, 4, 4], 1.25);
        let (mean, var) = batch_moments(&x).unwrap();
        for c in 0..3 {
            assert!((mean[c] - 1.25).abs() < 1e-7);
            assert!(var[c].abs() < 1e-7);
        }
    }

    #[test]
    fn moments_plus_minus_one() {
        let mut data = vec![1.0f32; 8];
        for v in data.iter_mut().skip(4) {
            *v = -1.0;
        }
        let x = t(&[8, 1, 1, 1], data);
        let (mean, var) = batch_moments(&x).unwrap();
        assert!(mean[0].abs() < 1e-7);
        assert!((var[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn bn_identity_and_degenerate_scale() {
        let x = t(&[1, 1, 2, 2], vec![0.5, -1.0, 2.0, 0.0]);
        let y = bn_forward(&x, &[0.0], &[1.0], &[1.0], &[0.0], 0.0).unwrap();
        assert_eq!(y.data(), x.data());
        let y = bn_forward(&x, &[0.3], &[2.0], &[0.0], &[7.0], 1e-5).unwrap();
        for &v in y.data() {
            assert_eq!(v, 7.0);
        }
    }

    #[test]
    fn bn_hand_arithmetic() {
        // x=2, mu=1, var=3, eps=1, gamma=2, beta=1 -> 2*(1)/2 + 1 = 2
        let x = t(&[1, 1, 1, 1], vec![2.0]);
        let y = bn_forward(&x, &[1.0], &[3.0], &[2.0], &[1.0], 1.0).unwrap();
        assert!((y.data()[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn bn_rejects_negative_variance() {
        let x = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(bn_forward(&x, &[0.0], &[-0.1], &[1.0], &[0.0], 1e-5).is_err());
    }

    #[test]
    fn centroid_logits_hand_case() {
        // f=(0,0), p0=(1,0), p1=(0,2), tau=1 -> logits (-1, -4)
        let f = t(&[1, 2], vec![0.0, 0.0]);
        let p = t(&[2, 2], vec![1.0, 0.0, 0.0, 2.0]);
        let l = nearest_centroid_logits(&f, &p, 1.0).unwrap();
        assert_eq!(l.data(), &[-1.0, -4.0]);
    }

    #[test]
    fn centroid_exact_match_and_tie() {
        let f = t(&[1, 2], vec![3.0, 4.0]);
        let p = t(&[3, 2], vec![0.0, 0.0, 3.0, 4.0, 6.0, 8.0]);
        let l = nearest_centroid_logits(&f, &p, 2.0).unwrap();
        assert_eq!(l.data()[1], 0.0);
        assert!(l.data()[1] > l.data()[0] && l.data()[1] > l.data()[2]);
        // equidistant prototypes give equal logits
        assert_eq!(l.data()[0], l.data()[2]);
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let l = 4usize;
        let logits = Tensor::zeros(&[2, l]);
        let (loss, _) = cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((loss - (l as f32).ln()).abs() < 1e-6);

        let mut hot = Tensor::zeros(&[1, 3]);
        hot.data_mut()[1] = 20.0;
        let (loss, _) = cross_entropy(&hot, &[1]).unwrap();
        assert!(loss < 1e-3);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(cross_entropy(&logits, &[3]).is_err());
    }

    #[test]
    fn cross_entropy_shift_invariance() {
        let logits = t(&[1, 3], vec![0.2, -1.0, 0.7]);
        let shifted = t(&[1, 3], vec![10.2, 9.0, 10.7]);
        let (l1, d1) = cross_entropy(&logits, &[2]).unwrap();
        let (l2, d2) = cross_entropy(&shifted, &[2]).unwrap();
        assert!((l1 - l2).abs() < 1e-5);
        for (a, b) in d1.data().iter().zip(d2.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
