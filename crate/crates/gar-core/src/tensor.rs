//! Dense row-major fp64 tensors.
//!
//! Only what the loss expressions and MLP training need: rank 0 (scalars),
//! rank 1 (vectors) and rank 2 (matrices). Tensors are immutable values;
//! operations allocate fresh storage.

use crate::error::{GarError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build from an explicit shape and row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(GarError::ShapeMismatch {
                expected: shape,
                got: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![1.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True for any single-element tensor (shape [] or [1] or [1,1]).
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            _ => 1,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise in-place addition; shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Column `j` of a rank-2 tensor as a vector.
    pub fn column(&self, j: usize) -> Result<Tensor> {
        if self.shape.len() != 2 || j >= self.shape[1] {
            return Err(GarError::ShapeMismatch {
                expected: vec![self.rows(), j + 1],
                got: self.shape.clone(),
            });
        }
        let (n, t) = (self.shape[0], self.shape[1]);
        let data = (0..n).map(|i| self.data[i * t + j]).collect();
        Ok(Tensor::vector(data))
    }

    /// Reinterpret a vector as an N x 1 matrix (no copy of semantics, data cloned).
    pub fn as_matrix(&self) -> Tensor {
        match self.shape.len() {
            2 => self.clone(),
            1 => Tensor {
                shape: vec![self.shape[0], 1],
                data: self.data.clone(),
            },
            _ => Tensor {
                shape: vec![1, 1],
                data: self.data.clone(),
            },
        }
    }

    /// Gather rows of a rank-2 tensor by index.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(GarError::ShapeMismatch {
                expected: vec![0, 0],
                got: self.shape.clone(),
            });
        }
        let t = self.shape[1];
        let mut data = Vec::with_capacity(idx.len() * t);
        for &i in idx {
            data.extend_from_slice(&self.data[i * t..(i + 1) * t]);
        }
        Tensor::new(vec![idx.len(), t], data)
    }
}

/// Plain 2D matrix product on raw slices: C[m,n] = A[m,k] * B[k,n].
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv += av * bv;
            }
        }
    }
    c
}
