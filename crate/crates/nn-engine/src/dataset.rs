use crate::error::{invalid_arg, Result};
use crate::tensor::Tensor;

/// A labeled image set: images [n, C, H, W], labels in 0..L-1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<u16>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<u16>) -> Result<Self> {
        images.expect_rank(4, "dataset images")?;
        if images.dim(0) != labels.len() {
            return invalid_arg("dataset image count does not match label count");
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gather a sub-batch by sample index.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<u16>) {
        let shape = self.images.shape();
        let sample = shape[1] * shape[2] * shape[3];
        let src = self.images.data();
        let mut data = Vec::with_capacity(idx.len() * sample);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(&src[i * sample..(i + 1) * sample]);
            labels.push(self.labels[i]);
        }
        let images = Tensor::new(vec![idx.len(), shape[1], shape[2], shape[3]], data)
            .expect("gathered batch shape");
        (images, labels)
    }

    /// Sample indices grouped by class label.
    pub fn indices_by_class(&self, classes: usize) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); classes];
        for (i, &y) in self.labels.iter().enumerate() {
            groups[y as usize].push(i);
        }
        groups
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_gathers_rows() {
        let images = Tensor::new(vec![3, 1, 1, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let ds = Dataset::new(images, vec![0, 1, 0]).unwrap();
        let (b, y) = ds.batch(&[2, 0]);
        assert_eq!(b.data(), &[4.0, 5.0, 0.0, 1.0]);
        assert_eq!(y, vec![0, 0]);
    }

    #[test]
    fn rejects_length_mismatch() {
        let images = Tensor::zeros(&[2, 1, 1, 1]);
        assert!(Dataset::new(images, vec![0]).is_err());
    }
}
