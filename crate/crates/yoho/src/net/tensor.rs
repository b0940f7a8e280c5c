//! Dense tensors for the layer engine.
//!
//! Values are stored row-major in f64; parameter tensors also carry a
//! gradient buffer of the same length. Activations flow as rank-4
//! `[batch, time, freq, channels]` arrays.

/// Shape plus flat storage, with an optional gradient of identical length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} values",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        }
    }

    /// Parameter constructor: allocates a zeroed gradient buffer.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Self {
        let mut t = Tensor::from_vec(shape, data);
        t.grad = Some(vec![0.0; t.data.len()]);
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        self.grad
            .as_mut()
            .expect("tensor has no gradient buffer")
            .as_mut_slice()
    }

    pub fn grad_ref(&self) -> &[f64] {
        self.grad
            .as_ref()
            .expect("tensor has no gradient buffer")
            .as_slice()
    }

    /// Rank-4 dimensions `[batch, time, freq, channels]`.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected rank-4, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }
}
