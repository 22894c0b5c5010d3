//! Dense tensors and reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a plain value (row-major `f64` data plus an optional
//! gradient buffer). Differentiable computation happens on a [`Graph`], which
//! records each operation with the forward values its backward pass needs.
//! Leaf tensors are copied into the graph; after [`Graph::backward`] their
//! gradients are read back with [`Graph::grad`].

mod gradcheck;
mod graph;

pub use gradcheck::{grad_check, grad_check_many, relative_error};
pub use graph::{Activation, Axis, Fault, Graph, Reduction, Var};
pub(crate) use graph::argmax as graph_argmax;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor rank must be at least 1".into()));
    }
    if shape.contains(&0) {
        return Err(Error::Shape(format!("zero-size dimension in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {i} is {}", data[i])));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    /// Op outputs: shape already validated, values may legitimately be
    /// non-finite mid-computation (caught by the divergence guard).
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    /// # Panics
    /// On an empty or zero-size shape.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    /// # Panics
    /// On an empty or zero-size shape.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = check_shape(shape).expect("valid shape");
        Tensor::from_raw(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_raw(vec![1], vec![value])
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, v)| *b += v),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor::from_raw(shape.to_vec(), self.data.clone()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_valid() {
        let t = Tensor::new([2], vec![1.0, 2.0]).unwrap();
        assert_eq!(t.shape(), &[2]);
        assert_eq!(t.data(), &[1.0, 2.0]);
        assert!(t.grad().is_none());
    }

    #[test]
    fn create_rejects_length_mismatch() {
        assert!(matches!(
            Tensor::new([2, 2], vec![1.0, 2.0, 3.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn create_rejects_nan() {
        assert!(matches!(
            Tensor::new([1], vec![f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn create_rejects_zero_size() {
        assert!(Tensor::new([0], vec![]).is_err());
        assert!(Tensor::new(Vec::<usize>::new(), vec![]).is_err());
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::zeros(&[2]);
        t.accumulate_grad(&[1.0, 2.0]);
        t.accumulate_grad(&[1.0, 2.0]);
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }
}
