use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Batch of feature maps, shape `(batch, channels, height, width)`, row-major
/// with width fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Dimension(format!(
                "tensor of shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("tensor contains non-finite values".into()));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Values of batch element `b`.
    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[b * n..(b + 1) * n]
    }

    pub(crate) fn from_parts(shape: [usize; 4], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor4 { shape, data }
    }
}

/// Mean over all elements of the squared difference.
pub fn mse_loss(out: &Tensor4, target: &Tensor4) -> Result<f64> {
    if out.shape != target.shape {
        return Err(Error::Dimension(format!(
            "loss shapes differ: {:?} vs {:?}",
            out.shape, target.shape
        )));
    }
    let sum: f64 = out.data.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / out.data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let out = Tensor4::new([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let zero = Tensor4::zeros([1, 1, 1, 2]);
        assert_eq!(mse_loss(&out, &zero).unwrap(), 2.5);
        assert_eq!(mse_loss(&out, &out).unwrap(), 0.0);
        let doubled = Tensor4::new([1, 1, 1, 2], vec![2.0, 4.0]).unwrap();
        assert_eq!(mse_loss(&doubled, &zero).unwrap(), 4.0 * 2.5);
        assert!(mse_loss(&out, &Tensor4::zeros([1, 1, 2, 1])).is_err());
    }

    #[test]
    fn rejects_bad_length_and_nan() {
        assert!(Tensor4::new([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor4::new([1, 1, 1, 1], vec![f64::NAN]).is_err());
    }
}
