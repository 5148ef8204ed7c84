//! Dense row-major tensor of f64 values, rank 2 (batch, features) or
//! rank 4 (batch, channel, height, width).

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), values: vec![0.0; n] }
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "shape/value mismatch");
        Self { shape: shape.to_vec(), values }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Feature count of a rank-2 tensor.
    pub fn features(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn row(&self, b: usize) -> &[f64] {
        let w: usize = self.shape[1..].iter().product();
        &self.values[b * w..(b + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
