//! Affine style shift: per-domain gain/bias applied to every pixel.

use nn_engine::{Dataset, RngStream};

use crate::error::{invalid_arg, Result};

pub const GAIN_BOUNDS: (f32, f32) = (0.2, 2.5);
pub const BIAS_BOUNDS: (f32, f32) = (-1.0, 1.0);

/// Default draw ranges for client domains.
pub const DEFAULT_GAIN_RANGE: (f32, f32) = (0.4, 1.8);
pub const DEFAULT_BIAS_RANGE: (f32, f32) = (-0.8, 0.8);

#[derive(Debug, Clone, PartialEq)]
pub struct DomainParams {
    pub client_id: u32,
    /// Multiplicative gain a > 0.
    pub gain: f32,
    /// Additive bias b.
    pub bias: f32,
    pub seed: u64,
}

impl DomainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain >= GAIN_BOUNDS.0 && self.gain <= GAIN_BOUNDS.1) {
            return invalid_arg(format!("gain {} outside {:?}", self.gain, GAIN_BOUNDS));
        }
        if !(self.bias >= BIAS_BOUNDS.0 && self.bias <= BIAS_BOUNDS.1) {
            return invalid_arg(format!("bias {} outside {:?}", self.bias, BIAS_BOUNDS));
        }
        Ok(())
    }
}

/// Draw m client domains with gains/biases uniform in the given ranges,
/// one RNG substream per client.
pub fn gen_domains(
    m: usize,
    seed: u64,
    gain_range: (f32, f32),
    bias_range: (f32, f32),
) -> Result<Vec<DomainParams>> {
    if m == 0 {
        return invalid_arg("need at least one client domain");
    }
    if gain_range.0 < GAIN_BOUNDS.0 || gain_range.1 > GAIN_BOUNDS.1 || gain_range.0 > gain_range.1 {
        return invalid_arg("gain range outside supported bounds");
    }
    if bias_range.0 < BIAS_BOUNDS.0 || bias_range.1 > BIAS_BOUNDS.1 || bias_range.0 > bias_range.1 {
        return invalid_arg("bias range outside supported bounds");
    }
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut rng = RngStream::derive(seed, "domain", i as u32, 0);
        out.push(DomainParams {
            client_id: i as u32,
            gain: rng.uniform(gain_range.0 as f64, gain_range.1 as f64) as f32,
            bias: rng.uniform(bias_range.0 as f64, bias_range.1 as f64) as f32,
            seed,
        });
    }
    Ok(out)
}

/// x' = a*x + b on every pixel; labels unchanged.
pub fn apply_style_shift(data: &Dataset, domain: &DomainParams) -> Dataset {
    let mut images = data.images.clone();
    for v in images.data_mut() {
        *v = domain.gain * *v + domain.bias;
    }
    Dataset {
        images,
        labels: data.labels.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataConfig;
    use crate::gen::gen_source;

    fn small_source() -> Dataset {
        let cfg = DataConfig {
            train_size: 50,
            test_size: 50,
            ..DataConfig::default()
        };
        gen_source(&cfg).unwrap().1
    }

    #[test]
    fn identity_shift_is_identity() {
        let ds = small_source();
        let p = DomainParams {
            client_id: 0,
            gain: 1.0,
            bias: 0.0,
            seed: 0,
        };
        assert_eq!(apply_style_shift(&ds, &p), ds);
    }

    #[test]
    fn moments_transform_affinely() {
        let ds = small_source();
        let p = DomainParams {
            client_id: 0,
            gain: 1.7,
            bias: -0.4,
            seed: 0,
        };
        let shifted = apply_style_shift(&ds, &p);
        let moments = |d: &Dataset| {
            let n = d.images.len() as f64;
            let mean = d.images.data().iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = d
                .images
                .data()
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        };
        let (m0, s0) = moments(&ds);
        let (m1, s1) = moments(&shifted);
        assert!((m1 - (1.7 * m0 - 0.4)).abs() < 1e-4);
        assert!((s1 - 1.7 * s0).abs() < 1e-4);
        assert_eq!(ds.labels, shifted.labels);
    }

    #[test]
    fn shift_then_inverse_recovers_input() {
        let ds = small_source();
        let p = DomainParams {
            client_id: 0,
            gain: 0.8,
            bias: 0.3,
            seed: 0,
        };
        let inv = DomainParams {
            client_id: 0,
            gain: 1.0 / 0.8,
            bias: -0.3 / 0.8,
            seed: 0,
        };
        let round = apply_style_shift(&apply_style_shift(&ds, &p), &inv);
        for (a, b) in round.images.data().iter().zip(ds.images.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn domains_in_range_and_deterministic() {
        let a = gen_domains(4, 42, DEFAULT_GAIN_RANGE, DEFAULT_BIAS_RANGE).unwrap();
        let b = gen_domains(4, 42, DEFAULT_GAIN_RANGE, DEFAULT_BIAS_RANGE).unwrap();
        assert_eq!(a, b);
        for d in &a {
            d.validate().unwrap();
            assert!(d.gain >= DEFAULT_GAIN_RANGE.0 && d.gain <= DEFAULT_GAIN_RANGE.1);
            assert!(d.bias >= DEFAULT_BIAS_RANGE.0 && d.bias <= DEFAULT_BIAS_RANGE.1);
        }
        // all pairs distinct
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                assert!(a[i].gain != a[j].gain || a[i].bias != a[j].bias);
            }
        }
    }

    #[test]
    fn client_substreams_are_isolated() {
        // drawing more clients leaves earlier clients' parameters unchanged
        let four = gen_domains(4, 7, DEFAULT_GAIN_RANGE, DEFAULT_BIAS_RANGE).unwrap();
        let six = gen_domains(6, 7, DEFAULT_GAIN_RANGE, DEFAULT_BIAS_RANGE).unwrap();
        assert_eq!(&four[..], &six[..4]);
    }
}
