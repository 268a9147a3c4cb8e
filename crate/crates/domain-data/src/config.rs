use crate::error::{invalid_arg, Result};

/// Generator settings for the synthetic source domain.
#[derive(Debug, Clone)]
pub struct DataConfig {
    /// Class count L.
    pub classes: usize,
    /// Image side length (images are 1 x side x side).
    pub side: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Low-frequency template grid side; templates are bilinear upsamples
    /// of a seeded grid of this size.
    pub grid: usize,
    /// Per-pixel Gaussian noise standard deviation.
    pub noise_std: f32,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            side: 16,
            train_size: 4000,
            test_size: 1000,
            grid: 4,
            noise_std: 0.3,
            seed: 42,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return invalid_arg("class count must be at least 2");
        }
        if self.side < 2 || self.grid < 2 || self.grid > self.side {
            return invalid_arg("need 2 <= grid <= side");
        }
        if self.train_size == 0 || self.test_size == 0 {
            return invalid_arg("split sizes must be positive");
        }
        if self.train_size % self.classes != 0 || self.test_size % self.classes != 0 {
            return invalid_arg("split sizes must be divisible by the class count for balance");
        }
        if !(self.noise_std >= 0.0) {
            return invalid_arg("noise std must be non-negative");
        }
        Ok(())
    }
}
