//! Server-side pre-training and evaluation.

use crate::dataset::Dataset;
use crate::error::{invalid_arg, NnError, Result};
use crate::forward::{forward, update_running_stats, EffectiveStats, Mode};
use crate::ops::cross_entropy;
use crate::params::{sgd_step, ModelParams, OptState, TrainConfig};
use crate::rng::RngStream;
use crate::spec::ModelSpec;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 256;

/// Class-mean prototype initialization: prototype c = mean of the features
/// labeled c.
pub fn init_prototypes(features: &Tensor, labels: &[u16], classes: usize) -> Result<Tensor> {
    features.expect_rank(2, "features")?;
    let (n, f) = (features.dim(0), features.dim(1));
    if labels.len() != n {
        return invalid_arg("label count does not match feature count");
    }
    let mut sums = vec![0.0f64; classes * f];
    let mut counts = vec![0usize; classes];
    let fd = features.data();
    for (i, &y) in labels.iter().enumerate() {
        let y = y as usize;
        if y >= classes {
            return invalid_arg(format!("label {y} out of range"));
        }
        counts[y] += 1;
        for fi in 0..f {
            sums[y * f + fi] += fd[i * f + fi] as f64;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(NnError::InvalidArgument(format!(
            "class {empty} has no samples for prototype initialization"
        )));
    }
    let data: Vec<f32> = sums
        .iter()
        .enumerate()
        .map(|(i, &s)| (s / counts[i / f] as f64) as f32)
        .collect();
    Tensor::new(vec![classes, f], data)
}

/// Argmax with lowest-index tie-breaking.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn eval_mode_of(stats_override: Option<&EffectiveStats>) -> Mode {
    if stats_override.is_some() {
        Mode::Adapt
    } else {
        Mode::Eval
    }
}

/// Fraction of argmax-correct predictions on `data`.
pub fn evaluate(
    spec: &ModelSpec,
    params: &ModelParams,
    data: &Dataset,
    stats_override: Option<&EffectiveStats>,
) -> Result<f32> {
    if data.is_empty() {
        return invalid_arg("evaluate: empty dataset");
    }
    let mode = eval_mode_of(stats_override);
    let mut correct = 0usize;
    let n = data.len();
    let mut at = 0;
    while at < n {
        let hi = (at + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (at..hi).collect();
        let (images, labels) = data.batch(&idx);
        let (_, logits, _) = forward(spec, params, &images, mode, stats_override)?;
        let l = logits.dim(1);
        for (i, &y) in labels.iter().enumerate() {
            if argmax(&logits.data()[i * l..(i + 1) * l]) == y as usize {
                correct += 1;
            }
        }
        at = hi;
    }
    Ok(correct as f32 / n as f32)
}

/// Mean cross-entropy of the model on `data` under the given statistics.
pub fn dataset_loss(
    spec: &ModelSpec,
    params: &ModelParams,
    data: &Dataset,
    stats_override: Option<&EffectiveStats>,
) -> Result<f32> {
    if data.is_empty() {
        return invalid_arg("dataset_loss: empty dataset");
    }
    let mode = eval_mode_of(stats_override);
    let n = data.len();
    let mut total = 0.0f64;
    let mut at = 0;
    while at < n {
        let hi = (at + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (at..hi).collect();
        let (images, labels) = data.batch(&idx);
        let (_, logits, _) = forward(spec, params, &images, mode, stats_override)?;
        let (loss, _) = cross_entropy(&logits, &labels)?;
        total += loss as f64 * (hi - at) as f64;
        at = hi;
    }
    Ok((total / n as f64) as f32)
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f32,
    pub val_accuracy: f32,
}

/// Extract features for a whole dataset with batch-statistic normalization
/// (chunked; each chunk normalized by its own batch statistics).
fn batch_stat_features(spec: &ModelSpec, params: &ModelParams, data: &Dataset) -> Result<Tensor> {
    let n = data.len();
    let mut out = Tensor::zeros(&[n, spec.feature_dim]);
    let od = out.data_mut();
    let f = spec.feature_dim;
    let mut at = 0;
    while at < n {
        let hi = (at + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (at..hi).collect();
        let (images, _) = data.batch(&idx);
        let (features, _, _) = forward(spec, params, &images, Mode::TrainServer, None)?;
        od[at * f..hi * f].copy_from_slice(features.data());
        at = hi;
    }
    Ok(out)
}

/// Joint mini-batch SGD on the cross-entropy objective over the feature
/// extractor and the prototypes. Prototypes start at class means of an
/// initial feature pass; BN running statistics follow the batch statistics
/// with the configured momentum.
pub fn pretrain(
    spec: &ModelSpec,
    source_train: &Dataset,
    source_val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochStats>)> {
    cfg.validate()?;
    spec.validate()?;
    if source_train.is_empty() || source_val.is_empty() {
        return invalid_arg("pretrain: datasets must be non-empty");
    }
    let mut covered = vec![false; spec.classes];
    for &y in &source_train.labels {
        if (y as usize) < spec.classes {
            covered[y as usize] = true;
        }
    }
    if !covered.iter().all(|&c| c) {
        return invalid_arg("pretrain: training labels must cover every class");
    }

    let mut init_rng = RngStream::derive(cfg.seed, "init", 0, 0);
    let mut params = ModelParams::init(spec, &mut init_rng);
    let features = batch_stat_features(spec, &params, source_train)?;
    params.prototypes = init_prototypes(&features, &source_train.labels, spec.classes)?;

    let mut opt = OptState::new(&params);
    let mut batch_rng = RngStream::derive(cfg.seed, "batch", 0, 0);
    let n = source_train.len();
    let bs = cfg.batch_size.min(n);
    let epoch_len = (n / bs).max(1);
    let mut history = Vec::new();
    let mut epoch_loss = 0.0f64;
    let mut epoch_steps = 0usize;

    for step in 0..cfg.steps {
        let idx = batch_rng.sample_distinct(n, bs);
        let (images, labels) = source_train.batch(&idx);
        let (_, logits, cache) = forward(spec, &params, &images, Mode::TrainServer, None)?;
        let (loss, dlogits) = cross_entropy(&logits, &labels)?;
        if !loss.is_finite() {
            return Err(NnError::Diverged { step });
        }
        let grads = crate::forward::backward(spec, &params, &cache, &dlogits)?;
        sgd_step(&mut params, &grads, cfg.lr, cfg.momentum, &mut opt)?;
        update_running_stats(spec, &mut params, &cache)?;
        epoch_loss += loss as f64;
        epoch_steps += 1;
        if (step + 1) % epoch_len == 0 || step + 1 == cfg.steps {
            let val_accuracy = evaluate(spec, &params, source_val, None)?;
            history.push(EpochStats {
                epoch: history.len(),
                mean_loss: (epoch_loss / epoch_steps as f64) as f32,
                val_accuracy,
            });
            epoch_loss = 0.0;
            epoch_steps = 0;
        }
    }
    Ok((params, history))
}
