//! Client-side adaptation loop: coefficients and prototypes trained by
//! cross-entropy descent on the support set; everything else frozen.

use domain_data::Episode;
use nn_engine::{
    backward, cross_entropy, forward, init_prototypes, sgd_update, LayerStats, Mode, ModelParams,
    ModelSpec, RngStream, Tensor,
};

use crate::coeffs::{coeff_gradients, init_coefficients, LccsCoefficients};
use crate::error::{invalid_arg, AdaptError, Result};
use crate::mixstyle::{sample_mixstyle, MixStyleConfig};
use crate::stats::{
    capture_batch_stats, capture_support_stats, mix_statistics, source_stats,
    stochastic_target_stats, SupportStats,
};

#[derive(Debug, Clone)]
pub struct AdaptConfig {
    pub steps: usize,
    pub lr: f32,
    pub momentum: f32,
    /// Support mini-batch size; capped at the support size.
    pub batch_size: usize,
    pub mixstyle: MixStyleConfig,
    /// Initial target weight lambda0 in [0,1] for the coefficient init.
    pub lambda0: f32,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 16,
            mixstyle: MixStyleConfig::default(),
            lambda0: 0.1,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return invalid_arg("adaptation learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid_arg("adaptation momentum must be in [0,1)");
        }
        if self.batch_size == 0 {
            return invalid_arg("adaptation batch size must be positive");
        }
        if !(0.0..=1.0).contains(&self.lambda0) {
            return invalid_arg("lambda0 must lie in [0,1]");
        }
        self.mixstyle.validate()
    }
}

/// Per-step support loss trace.
#[derive(Debug, Clone)]
pub struct AdaptTrace {
    pub losses: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub coefficients: LccsCoefficients,
    pub prototypes: Tensor,
    pub support_stats: SupportStats,
    pub trace: AdaptTrace,
}

fn check_class_coverage(labels: &[u16], classes: usize) -> Result<()> {
    let mut covered = vec![false; classes];
    for &y in labels {
        if (y as usize) < classes {
            covered[y as usize] = true;
        }
    }
    match covered.iter().position(|&c| !c) {
        Some(missing) => Err(AdaptError::InvalidArgument(format!(
            "support set covers no sample of class {missing}"
        ))),
        None => Ok(()),
    }
}

/// Adapt one client to its episode. The deployed conv weights, BN affine
/// parameters and running statistics stay untouched; only the mixing
/// coefficients and the local prototypes are trained. With zero steps the
/// deployed model passes through unchanged apart from the coefficient init.
pub fn adapt_client(
    spec: &ModelSpec,
    deployed: &ModelParams,
    episode: &Episode,
    cfg: &AdaptConfig,
    warm_start: Option<&LccsCoefficients>,
    rng: &mut RngStream,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    check_class_coverage(&episode.support.labels, spec.classes)?;
    let support = &episode.support;
    let support_stats = capture_support_stats(spec, deployed, support)?;
    let src = source_stats(deployed);

    let mut coeffs = match warm_start {
        Some(c) => {
            if c.n_layers() != spec.n_bn_layers() {
                return invalid_arg("warm-start coefficient layer count mismatch");
            }
            c.clone()
        }
        None => init_coefficients(spec.n_bn_layers(), cfg.lambda0)?,
    };

    if cfg.steps == 0 {
        return Ok(AdaptOutcome {
            coefficients: coeffs,
            prototypes: deployed.prototypes.clone(),
            support_stats,
            trace: AdaptTrace { losses: Vec::new() },
        });
    }

    // Prototypes restart from support class means under the initial mix.
    let eff = mix_statistics(&src, &support_stats.layers, &coeffs)?;
    let (features, _, _) = forward(spec, deployed, &support.images, Mode::Adapt, Some(&eff))?;
    let prototypes = init_prototypes(&features, &support.labels, spec.classes)?;

    let mut working = deployed.clone();
    working.prototypes = prototypes;

    let n = support.len();
    let bs = cfg.batch_size.min(n);
    let n_bn = spec.n_bn_layers();
    let mut coeff_vel = vec![0.0f32; n_bn * 4];
    let mut proto_vel = Tensor::zeros(working.prototypes.shape());
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let idx = rng.sample_distinct(n, bs);
        let (images, labels) = support.batch(&idx);
        let lambda = sample_mixstyle(rng, &cfg.mixstyle);
        let target: Vec<LayerStats> = if lambda.is_some() {
            let batch_stats = capture_batch_stats(spec, &working, &images)?;
            stochastic_target_stats(&support_stats, &batch_stats, lambda)?
        } else {
            support_stats.layers.clone()
        };
        let eff = mix_statistics(&src, &target, &coeffs)?;
        let (_, logits, cache) = forward(spec, &working, &images, Mode::Adapt, Some(&eff))?;
        let (loss, dlogits) = cross_entropy(&logits, &labels)?;
        if !loss.is_finite() {
            return Err(AdaptError::Diverged { step });
        }
        let grads = backward(spec, &working, &cache, &dlogits)?;
        let stat_grads = grads
            .bn_stats
            .as_ref()
            .expect("adapt-mode backward exposes statistics gradients");
        let coeff_grads = coeff_gradients(&src, &target, &eff, stat_grads)?;

        let mut flat = coeffs.flat();
        let flat_grads: Vec<f32> = coeff_grads.iter().flatten().copied().collect();
        sgd_update(&mut flat, &flat_grads, &mut coeff_vel, cfg.lr, cfg.momentum);
        coeffs = LccsCoefficients::from_flat(&flat)?;
        sgd_update(
            working.prototypes.data_mut(),
            grads.prototypes.data(),
            proto_vel.data_mut(),
            cfg.lr,
            cfg.momentum,
        );
        losses.push(loss);
    }

    if !coeffs.all_finite() {
        return Err(AdaptError::Diverged { step: cfg.steps });
    }
    Ok(AdaptOutcome {
        coefficients: coeffs,
        prototypes: working.prototypes,
        support_stats,
        trace: AdaptTrace { losses },
    })
}
