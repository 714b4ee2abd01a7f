//! Dense 64-bit tensors. Only rank-2 shapes are used by the layers; the
//! shape is kept as a list to match the checkpoint sidecar format.

use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, NnError> {
        let count: usize = shape.iter().product();
        if count != values.len() {
            return Err(NnError::ShapeMismatch {
                context: "tensor construction".into(),
                expected: shape,
                got: vec![values.len()],
            });
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { shape: vec![rows, cols], values: vec![0.0; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1, 1], values: vec![v] }
    }

    pub fn row(values: Vec<f64>) -> Self {
        Tensor { shape: vec![1, values.len()], values }
    }

    pub fn column(values: Vec<f64>) -> Self {
        Tensor { shape: vec![values.len(), 1], values }
    }

    /// Row-major matrix from `rows x cols` data.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, NnError> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.values[r * cols + c] = v;
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.values.len(), 1, "item() on non-scalar");
        self.values[0]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, NnError> {
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        if k != k2 {
            return Err(NnError::ShapeMismatch {
                context: "matmul".into(),
                expected: vec![k],
                got: vec![k2],
            });
        }
        let mut out = Tensor::zeros(n, m);
        for i in 0..n {
            for p in 0..k {
                let a = self.values[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let row = &other.values[p * m..(p + 1) * m];
                let dst = &mut out.values[i * m..(i + 1) * m];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor {
        let (n, m) = (self.rows(), self.cols());
        let mut out = Tensor::zeros(m, n);
        for i in 0..n {
            for j in 0..m {
                out.values[j * n + i] = self.values[i * m + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NnError> {
        if !self.same_shape(other) {
            return Err(NnError::ShapeMismatch {
                context: "elementwise op".into(),
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_in_place(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}
