//! Stochastic instance-statistics mixing weights.

use nn_engine::RngStream;

use crate::error::{invalid_arg, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MixStyleConfig {
    /// Per-step activation probability.
    pub p: f32,
    /// Shape of the symmetric Beta(alpha, alpha) mixing distribution.
    pub alpha: f32,
    pub enabled: bool,
}

impl Default for MixStyleConfig {
    fn default() -> Self {
        Self {
            p: 0.5,
            alpha: 0.3,
            enabled: true,
        }
    }
}

impl MixStyleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return invalid_arg("mixstyle probability must lie in [0,1]");
        }
        if !(self.alpha > 0.0) {
            return invalid_arg("mixstyle alpha must be positive");
        }
        Ok(())
    }
}

/// With probability p, a mixing weight drawn from Beta(alpha, alpha) via
/// Johnk's algorithm; otherwise absent. Draws are strictly inside (0,1).
pub fn sample_mixstyle(rng: &mut RngStream, cfg: &MixStyleConfig) -> Option<f32> {
    if !cfg.enabled || cfg.p == 0.0 {
        return None;
    }
    if rng.next_f64() >= cfg.p as f64 {
        return None;
    }
    let inv_alpha = 1.0 / cfg.alpha as f64;
    loop {
        // Johnk: accept x = u^(1/a), y = v^(1/a) when x + y <= 1,
        // return x / (x + y)
        let x = rng.next_f64().powf(inv_alpha);
        let y = rng.next_f64().powf(inv_alpha);
        let s = x + y;
        if s > 0.0 && s <= 1.0 {
            let lam = (x / s) as f32;
            if lam > 0.0 && lam < 1.0 {
                return Some(lam);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_never_fires() {
        let cfg = MixStyleConfig {
            p: 0.0,
            ..MixStyleConfig::default()
        };
        let mut rng = RngStream::new(1);
        for _ in 0..1000 {
            assert!(sample_mixstyle(&mut rng, &cfg).is_none());
        }
    }

    #[test]
    fn disabled_never_fires() {
        let cfg = MixStyleConfig {
            enabled: false,
            ..MixStyleConfig::default()
        };
        let mut rng = RngStream::new(2);
        assert!(sample_mixstyle(&mut rng, &cfg).is_none());
    }

    #[test]
    fn draws_stay_in_open_interval() {
        let cfg = MixStyleConfig {
            p: 1.0,
            ..MixStyleConfig::default()
        };
        let mut rng = RngStream::new(3);
        for _ in 0..10_000 {
            let lam = sample_mixstyle(&mut rng, &cfg).unwrap();
            assert!(lam > 0.0 && lam < 1.0);
        }
    }

    #[test]
    fn symmetric_beta_has_mean_half() {
        let cfg = MixStyleConfig {
            p: 1.0,
            alpha: 0.3,
            enabled: true,
        };
        let mut rng = RngStream::new(4);
        let n = 100_000;
        let mut sum = 0.0f64;
        for _ in 0..n {
            sum += sample_mixstyle(&mut rng, &cfg).unwrap() as f64;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }
}
