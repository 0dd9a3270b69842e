//! Dense 64-bit tensors and gradient-carrying parameters.
//!
//! Everything here is plain row-major `Vec<f64>` storage. The models are
//! small enough that this beats pulling in an array library, and the
//! gradient checks want full f64 precision anyway.

use crate::error::{FafError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(FafError::ShapeMismatch {
                expected: shape.clone(),
                got: vec![data.len()],
                context: "Tensor::new".into(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    /// Row-major `rows x cols` matrix.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(FafError::NonFinite { context: context.into() })
        }
    }
}

/// A learnable tensor with its gradient buffer.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub id: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(id: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Parameter { id: id.into(), value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// `y[o] = sum_i w[o,i] * x[i] + b[o]`
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (rows, cols) = match w.shape() {
        [r, c] => (*r, *c),
        s => {
            return Err(FafError::ShapeMismatch {
                expected: vec![0, 0],
                got: s.to_vec(),
                context: "linear_forward weights".into(),
            })
        }
    };
    if x.len() != cols || b.len() != rows {
        return Err(FafError::ShapeMismatch {
            expected: vec![rows, cols],
            got: vec![b.len(), x.len()],
            context: "linear_forward input/bias".into(),
        });
    }
    let mut out = b.data().to_vec();
    let wd = w.data();
    let xd = x.data();
    for o in 0..rows {
        let row = &wd[o * cols..(o + 1) * cols];
        out[o] += row.iter().zip(xd).map(|(wv, xv)| wv * xv).sum::<f64>();
    }
    Ok(Tensor::vector(out))
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::vector(x.data().iter().map(|v| v.max(0.0)).collect())
}

/// Softmax with max subtraction for stability.
pub fn softmax(x: &Tensor) -> Tensor {
    let max = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.data().iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Tensor::vector(exps.iter().map(|e| e / sum).collect())
}
