//! Dense row-major f64 tensors.
//!
//! `Tensor` is a plain value type: it carries data, a shape, and an optional
//! gradient buffer, and knows nothing about operation recording. Differentiable
//! computation happens on a [`crate::tape::Tape`]; parameters live as `Tensor`s
//! between steps and gradients are accumulated back into their `grad` field.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` exactly.
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        if data.len() != numel_of(&shape) {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                detail: format!("{} data elements", data.len()),
                shape,
            });
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel_of(&shape);
        Tensor { shape, data: vec![0.0; n], requires_grad: false, grad: None }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = numel_of(&shape);
        Tensor { shape, data: vec![value; n], requires_grad: false, grad: None }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value], requires_grad: true, grad: None }
    }

    /// Samples every element from `U(lo, hi)`.
    pub fn rand_uniform<R: Rng>(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let dist = Uniform::new(lo, hi).expect("uniform bounds");
        let n = numel_of(&shape);
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    /// Samples every element from `N(0, std^2)`.
    pub fn rand_normal<R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("normal std");
        let n = numel_of(&shape);
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a rank-2 tensor (or 1 for lower ranks).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 { self.shape[0] } else { 1 }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j] = v;
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if numel_of(&shape) != self.data.len() {
            return Err(Error::InvalidShape {
                op: "Tensor::reshaped",
                detail: format!("cannot view {:?} as {:?}", self.shape, shape),
                shape: self.shape.clone(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Adds `g` into the gradient buffer, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (dst, src) in grad.iter_mut().zip(g) {
            *dst += *src;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
