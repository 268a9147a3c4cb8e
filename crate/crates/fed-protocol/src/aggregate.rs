//! Sample-weighted FedAvg over client coefficient sets.

use bn_adapt::LccsCoefficients;

use crate::error::{invalid_arg, Result};
use crate::wire::{ClientUpdate, GlobalCoefficients};

/// Coefficient-wise weighted mean with weights |D_Ti| / I, I = sum of all
/// |D_Ti|. Accumulation runs in f64 and in a canonical update order, so the
/// result is bit-identical under permutation of the input list.
pub fn aggregate_fedavg(updates: &[ClientUpdate]) -> Result<GlobalCoefficients> {
    let first = match updates.first() {
        Some(u) => u,
        None => return invalid_arg("cannot aggregate an empty update list"),
    };
    let round = first.round;
    let n_layers = first.coefficients.n_layers();
    for u in updates {
        if u.round != round {
            return invalid_arg(format!(
                "mixed rounds in aggregation: {round} and {}",
                u.round
            ));
        }
        if u.coefficients.n_layers() != n_layers {
            return invalid_arg(format!(
                "mixed layer counts in aggregation: {n_layers} and {}",
                u.coefficients.n_layers()
            ));
        }
        if u.n_samples == 0 {
            return invalid_arg("update with zero samples");
        }
        if !u.coefficients.all_finite() {
            return invalid_arg("update with non-finite coefficients");
        }
    }

    // canonical order: permutation invariance must hold bit-exactly, and
    // f64 addition is not associative
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by(|a, b| {
        (a.client_id, a.n_samples)
            .cmp(&(b.client_id, b.n_samples))
            .then_with(|| {
                let ka: Vec<u32> = a.coefficients.flat().iter().map(|v| v.to_bits()).collect();
                let kb: Vec<u32> = b.coefficients.flat().iter().map(|v| v.to_bits()).collect();
                ka.cmp(&kb)
            })
    });

    let total: u64 = ordered.iter().map(|u| u.n_samples as u64).sum();
    let mut acc = vec![0.0f64; n_layers * 4];
    for u in &ordered {
        let w = u.n_samples as f64 / total as f64;
        for (a, &c) in acc.iter_mut().zip(u.coefficients.flat().iter()) {
            *a += w * c as f64;
        }
    }
    let flat: Vec<f32> = acc.iter().map(|&v| v as f32).collect();
    Ok(GlobalCoefficients {
        round,
        coefficients: LccsCoefficients::from_flat(&flat)?,
    })
}
