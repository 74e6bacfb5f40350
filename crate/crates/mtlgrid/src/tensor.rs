//! Dense row-major f64 tensors. All computation in this crate runs on these.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                expected: format!("{} elements for shape {:?}", expected, shape),
                actual: format!("{} elements", data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, op: &'static str, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                op,
                expected: format!("{:?}", expected),
                actual: format!("{:?}", self.shape),
            });
        }
        Ok(())
    }
}

/// Softmax along `axis`, stabilized by max-subtraction.
pub fn softmax(t: &Tensor, axis: usize) -> Tensor {
    let shape = t.shape();
    assert!(axis < shape.len(), "softmax axis {} out of rank {}", axis, shape.len());
    let k = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0; t.len()];
    let data = t.data();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * k * inner + i;
            let mut max = f64::NEG_INFINITY;
            for j in 0..k {
                max = max.max(data[base + j * inner]);
            }
            let mut sum = 0.0;
            for j in 0..k {
                let e = (data[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                sum += e;
            }
            for j in 0..k {
                out[base + j * inner] /= sum;
            }
        }
    }
    Tensor {
        shape: shape.to_vec(),
        data: out,
    }
}

/// Row-wise argmax of a (B, K) tensor. Ties break to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    assert_eq!(logits.rank(), 2, "argmax_rows expects rank-2");
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
