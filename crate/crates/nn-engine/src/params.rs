use crate::error::{invalid_arg, NnError, Result};
use crate::rng::RngStream;
use crate::spec::{LayerDesc, ModelSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// out x in x kH x kW
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

/// Feature-extractor parameters plus the class prototypes of the
/// nearest-centroid head. Conv and BN entries follow spec layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub convs: Vec<ConvParams>,
    pub bns: Vec<BnParams>,
    /// L x feature_dim
    pub prototypes: Tensor,
}

impl ModelParams {
    /// Fan-balanced uniform conv weights, zero biases, identity BN affine,
    /// unit running statistics, zero prototypes.
    pub fn init(spec: &ModelSpec, rng: &mut RngStream) -> Self {
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        for layer in &spec.layers {
            match *layer {
                LayerDesc::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => {
                    let fan_in = in_ch * kernel * kernel;
                    let fan_out = out_ch * kernel * kernel;
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let n = out_ch * in_ch * kernel * kernel;
                    let data: Vec<f32> = (0..n)
                        .map(|_| rng.uniform(-bound, bound) as f32)
                        .collect();
                    convs.push(ConvParams {
                        weight: Tensor::new(vec![out_ch, in_ch, kernel, kernel], data)
                            .expect("conv weight shape"),
                        bias: Tensor::zeros(&[out_ch]),
                    });
                }
                LayerDesc::BatchNorm { channels, .. } => {
                    bns.push(BnParams {
                        gamma: vec![1.0; channels],
                        beta: vec![0.0; channels],
                        running_mean: vec![0.0; channels],
                        running_var: vec![1.0; channels],
                    });
                }
                _ => {}
            }
        }
        Self {
            convs,
            bns,
            prototypes: Tensor::zeros(&[spec.classes, spec.feature_dim]),
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let (mut ci, mut bi) = (0usize, 0usize);
        for layer in &spec.layers {
            match *layer {
                LayerDesc::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => {
                    let p = self
                        .convs
                        .get(ci)
                        .ok_or_else(|| NnError::InvalidArgument("missing conv params".into()))?;
                    if p.weight.shape() != [out_ch, in_ch, kernel, kernel]
                        || p.bias.shape() != [out_ch]
                    {
                        return invalid_arg(format!("conv {ci} parameter shape mismatch"));
                    }
                    ci += 1;
                }
                LayerDesc::BatchNorm { channels, .. } => {
                    let p = self
                        .bns
                        .get(bi)
                        .ok_or_else(|| NnError::InvalidArgument("missing bn params".into()))?;
                    if [&p.gamma, &p.beta, &p.running_mean, &p.running_var]
                        .iter()
                        .any(|v| v.len() != channels)
                    {
                        return invalid_arg(format!("bn {bi} parameter shape mismatch"));
                    }
                    if p.running_var.iter().any(|&v| !(v > 0.0)) {
                        return invalid_arg(format!("bn {bi} running variance must be positive"));
                    }
                    bi += 1;
                }
                _ => {}
            }
        }
        if ci != self.convs.len() || bi != self.bns.len() {
            return invalid_arg("parameter list longer than spec layer list");
        }
        if self.prototypes.shape() != [spec.classes, spec.feature_dim] {
            return invalid_arg("prototype matrix shape mismatch");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f32,
    pub momentum: f32,
    pub steps: usize,
    pub batch_size: usize,
    pub bn_momentum: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            steps: 1500,
            batch_size: 32,
            bn_momentum: 0.1,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return invalid_arg("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid_arg("momentum must be in [0,1)");
        }
        if self.batch_size == 0 {
            return invalid_arg("batch size must be positive");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return invalid_arg("bn momentum must be in (0,1]");
        }
        Ok(())
    }
}

/// Gradient of the effective statistics actually used by one BN layer.
#[derive(Debug, Clone)]
pub struct StatsGrad {
    pub dmean: Vec<f32>,
    pub dvar: Vec<f32>,
}

/// Gradients mirroring `ModelParams`, plus (in adapt mode) the per-layer
/// effective-statistics gradients.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub conv_w: Vec<Tensor>,
    pub conv_b: Vec<Tensor>,
    pub bn_gamma: Vec<Vec<f32>>,
    pub bn_beta: Vec<Vec<f32>>,
    pub prototypes: Tensor,
    pub bn_stats: Option<Vec<StatsGrad>>,
}

/// SGD momentum buffers for the pre-training phase (conv weights/biases,
/// BN affine, prototypes).
#[derive(Debug, Clone)]
pub struct OptState {
    conv_w: Vec<Tensor>,
    conv_b: Vec<Tensor>,
    bn_gamma: Vec<Vec<f32>>,
    bn_beta: Vec<Vec<f32>>,
    prototypes: Tensor,
}

impl OptState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            conv_w: params
                .convs
                .iter()
                .map(|c| Tensor::zeros(c.weight.shape()))
                .collect(),
            conv_b: params
                .convs
                .iter()
                .map(|c| Tensor::zeros(c.bias.shape()))
                .collect(),
            bn_gamma: params.bns.iter().map(|b| vec![0.0; b.gamma.len()]).collect(),
            bn_beta: params.bns.iter().map(|b| vec![0.0; b.beta.len()]).collect(),
            prototypes: Tensor::zeros(params.prototypes.shape()),
        }
    }
}

/// v <- momentum*v + g; p <- p - lr*v
pub fn sgd_update(p: &mut [f32], g: &[f32], v: &mut [f32], lr: f32, momentum: f32) {
    debug_assert!(p.len() == g.len() && g.len() == v.len());
    for i in 0..p.len() {
        v[i] = momentum * v[i] + g[i];
        p[i] -= lr * v[i];
    }
}

/// One momentum-SGD step over the pre-training trainable set. Running BN
/// statistics are not touched here.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &GradientSet,
    lr: f32,
    momentum: f32,
    state: &mut OptState,
) -> Result<()> {
    if !(lr > 0.0) {
        return invalid_arg("learning rate must be positive");
    }
    if grads.conv_w.len() != params.convs.len() || grads.bn_gamma.len() != params.bns.len() {
        return invalid_arg("gradient set does not match parameter layout");
    }
    for (i, conv) in params.convs.iter_mut().enumerate() {
        if grads.conv_w[i].shape() != conv.weight.shape()
            || grads.conv_b[i].shape() != conv.bias.shape()
        {
            return invalid_arg(format!("conv {i} gradient shape mismatch"));
        }
        sgd_update(
            conv.weight.data_mut(),
            grads.conv_w[i].data(),
            state.conv_w[i].data_mut(),
            lr,
            momentum,
        );
        sgd_update(
            conv.bias.data_mut(),
            grads.conv_b[i].data(),
            state.conv_b[i].data_mut(),
            lr,
            momentum,
        );
    }
    for (i, bn) in params.bns.iter_mut().enumerate() {
        if grads.bn_gamma[i].len() != bn.gamma.len() {
            return invalid_arg(format!("bn {i} gradient shape mismatch"));
        }
        sgd_update(&mut bn.gamma, &grads.bn_gamma[i], &mut state.bn_gamma[i], lr, momentum);
        sgd_update(&mut bn.beta, &grads.bn_beta[i], &mut state.bn_beta[i], lr, momentum);
    }
    if grads.prototypes.shape() != params.prototypes.shape() {
        return invalid_arg("prototype gradient shape mismatch");
    }
    sgd_update(
        params.prototypes.data_mut(),
        grads.prototypes.data(),
        state.prototypes.data_mut(),
        lr,
        momentum,
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_hand_arithmetic() {
        // momentum 0, lr 1, g = 0.5, p = 1 -> p = 0.5
        let mut p = [1.0f32];
        let mut v = [0.0f32];
        sgd_update(&mut p, &[0.5], &mut v, 1.0, 0.0);
        assert_eq!(p[0], 0.5);
    }

    #[test]
    fn zero_gradient_decays_velocity_only() {
        let mut p = [2.0f32];
        let mut v = [1.0f32];
        sgd_update(&mut p, &[0.0], &mut v, 0.1, 0.9);
        assert!((v[0] - 0.9).abs() < 1e-7);
        assert!((p[0] - (2.0 - 0.1 * 0.9)).abs() < 1e-7);
    }

    #[test]
    fn two_steps_match_unrolled_recurrence() {
        let (lr, m) = (0.1f32, 0.9f32);
        let (g1, g2) = (0.3f32, -0.2f32);
        let mut p = [1.0f32];
        let mut v = [0.0f32];
        sgd_update(&mut p, &[g1], &mut v, lr, m);
        sgd_update(&mut p, &[g2], &mut v, lr, m);
        // hand-unrolled: v1 = g1; p1 = 1 - lr*g1; v2 = m*g1 + g2; p2 = p1 - lr*v2
        let v2 = m * g1 + g2;
        let expect = 1.0 - lr * g1 - lr * v2;
        assert_eq!(p[0], expect);
    }

    #[test]
    fn init_matches_spec_shapes() {
        let spec = ModelSpec::micro_cnn(5);
        let params = ModelParams::init(&spec, &mut RngStream::new(42));
        params.validate(&spec).unwrap();
        assert_eq!(params.convs.len(), 3);
        assert_eq!(params.bns.len(), 3);
        assert_eq!(params.prototypes.shape(), [5, 32]);
    }

    #[test]
    fn validate_rejects_nonpositive_running_variance() {
        let spec = ModelSpec::micro_cnn(5);
        let mut params = ModelParams::init(&spec, &mut RngStream::new(42));
        params.bns[0].running_var[0] = 0.0;
        assert!(params.validate(&spec).is_err());
    }
}
