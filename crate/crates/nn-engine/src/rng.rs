//! Splittable deterministic random streams.
//!
//! The generator is splitmix64: 64 bits of state advanced by the golden-ratio
//! increment and finalized by the standard mixing function. Streams are
//! derived from a (root seed, purpose tag, client id, round) path; the same
//! path always yields the same draw sequence, independent of scheduling.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            state: mix(seed ^ GOLDEN),
        }
    }

    /// Derive the stream for a (root seed, purpose tag, client id, round)
    /// path by absorbing each component into the state.
    pub fn derive(root_seed: u64, tag: &str, client_id: u32, round: u32) -> Self {
        let mut state = mix(root_seed ^ GOLDEN);
        for &b in tag.as_bytes() {
            state = mix(state ^ (b as u64 | 0x100).wrapping_mul(GOLDEN));
        }
        state = mix(state ^ ((client_id as u64) << 1 | 1));
        state = mix(state ^ ((round as u64) << 33 | 3));
        Self { state }
    }

    /// Child stream; advances this stream by one draw.
    pub fn split(&mut self) -> Self {
        Self {
            state: mix(self.next_u64() ^ GOLDEN),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_f32(&mut self) -> f32 {
        self.next_f64() as f32
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal draw via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the argument of ln strictly positive.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform index in 0..n (n > 0).
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    /// k distinct indices drawn uniformly from 0..n, via partial
    /// Fisher-Yates. Order is part of the draw.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_path_identical_sequence() {
        let mut a = RngStream::derive(42, "adapt", 3, 1);
        let mut b = RngStream::derive(42, "adapt", 3, 1);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_paths_diverge() {
        let mut base = RngStream::derive(42, "adapt", 0, 0);
        let mut other_tag = RngStream::derive(42, "episode", 0, 0);
        let mut other_client = RngStream::derive(42, "adapt", 1, 0);
        let mut other_round = RngStream::derive(42, "adapt", 0, 1);
        let x = base.next_u64();
        assert_ne!(x, other_tag.next_u64());
        assert_ne!(x, other_client.next_u64());
        assert_ne!(x, other_round.next_u64());
    }

    #[test]
    fn uniform_in_range() {
        let mut rng = RngStream::new(7);
        for _ in 0..1000 {
            let v = rng.uniform(0.4, 1.8);
            assert!((0.4..1.8).contains(&v));
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = RngStream::new(11);
        let n = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = rng.normal();
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn sample_distinct_is_distinct_and_in_range() {
        let mut rng = RngStream::new(3);
        let mut idx = rng.sample_distinct(50, 20);
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 20);
        assert!(idx.iter().all(|&i| i < 50));
    }
}
