use crate::error::{invalid_arg, NnError, Result};

/// One layer of the feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerDesc {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        channels: usize,
        eps: f32,
        momentum: f32,
    },
    Relu,
    GlobalAvgPool,
}

/// Architecture description: feature extractor layer sequence plus the
/// nearest-centroid head (class count and distance temperature).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Input (channels, height, width).
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerDesc>,
    pub feature_dim: usize,
    pub classes: usize,
    pub temperature: f32,
}

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

impl ModelSpec {
    /// Desk-scale three-block CNN on 1x16x16 inputs: three conv+BN+ReLU
    /// blocks (8, 16, 32 channels) and a global average pool into a 32-dim
    /// feature space.
    ///
    /// Convolutions are padding-free: zero padding would inject unshifted
    /// border context, and the per-channel statistics of an affinely shifted
    /// input would no longer transform affinely.
    pub fn micro_cnn(classes: usize) -> Self {
        let conv = |in_ch, out_ch, stride| LayerDesc::Conv2d {
            in_ch,
            out_ch,
            kernel: 3,
            stride,
            padding: 0,
        };
        let bn = |channels| LayerDesc::BatchNorm {
            channels,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        };
        Self {
            input: (1, 16, 16),
            layers: vec![
                conv(1, 8, 1),
                bn(8),
                LayerDesc::Relu,
                conv(8, 16, 2),
                bn(16),
                LayerDesc::Relu,
                conv(16, 32, 2),
                bn(32),
                LayerDesc::Relu,
                LayerDesc::GlobalAvgPool,
            ],
            feature_dim: 32,
            classes,
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return invalid_arg("class count must be at least 2");
        }
        if !(self.temperature > 0.0) {
            return invalid_arg("temperature must be positive");
        }
        let (mut c, mut h, mut w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return invalid_arg("input extents must be positive");
        }
        let mut saw_pool = false;
        for (i, layer) in self.layers.iter().enumerate() {
            if saw_pool {
                return invalid_arg("global-avg-pool must be the last feature layer");
            }
            match *layer {
                LayerDesc::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                } => {
                    if in_ch != c {
                        return Err(NnError::InvalidArgument(format!(
                            "layer {i}: conv expects {in_ch} input channels, got {c}"
                        )));
                    }
                    if kernel == 0 || stride == 0 || out_ch == 0 {
                        return invalid_arg("conv kernel/stride/channels must be positive");
                    }
                    if h + 2 * padding < kernel || w + 2 * padding < kernel {
                        return Err(NnError::InvalidArgument(format!(
                            "layer {i}: kernel {kernel} larger than padded input {h}x{w}"
                        )));
                    }
                    h = (h + 2 * padding - kernel) / stride + 1;
                    w = (w + 2 * padding - kernel) / stride + 1;
                    c = out_ch;
                }
                LayerDesc::BatchNorm { channels, eps, momentum } => {
                    if channels != c {
                        return Err(NnError::InvalidArgument(format!(
                            "layer {i}: batchnorm expects {channels} channels, got {c}"
                        )));
                    }
                    if !(eps > 0.0) || !(momentum > 0.0 && momentum <= 1.0) {
                        return invalid_arg("batchnorm eps must be > 0 and momentum in (0,1]");
                    }
                }
                LayerDesc::Relu => {}
                LayerDesc::GlobalAvgPool => saw_pool = true,
            }
        }
        if !saw_pool {
            return invalid_arg("model needs exactly one global-avg-pool, positioned last");
        }
        if c != self.feature_dim {
            return Err(NnError::InvalidArgument(format!(
                "feature dim {} does not match final channel count {c}",
                self.feature_dim
            )));
        }
        Ok(())
    }

    pub fn n_bn_layers(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerDesc::BatchNorm { .. }))
            .count()
    }

    /// Channel counts of the BN layers, in layer order.
    pub fn bn_channels(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerDesc::BatchNorm { channels, .. } => Some(*channels),
                _ => None,
            })
            .collect()
    }
}
