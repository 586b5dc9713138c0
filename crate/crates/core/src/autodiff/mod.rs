//! Graph abstraction shared by eager evaluation and reverse-mode autodiff.
//!
//! Layer code is written once against [`Ops`]. Running it with [`Eager`]
//! computes plain tensors; running it with a [`Tape`] records every step so
//! [`Tape::backward`] can produce gradients. Both paths call the same tensor
//! kernels, so recorded values are bitwise equal to eager values.

mod eager;
mod gradcheck;
mod tape;

pub use eager::Eager;
pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use tape::{Gradients, Tape, Var};

use crate::error::Result;
use crate::tensor::{EwOp, ReduceOp, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Sqrt,
}

impl Unary {
    pub(crate) fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Unary::Relu => crate::layers::activation(crate::layers::Activation::Relu, x),
            Unary::Sigmoid => crate::layers::activation(crate::layers::Activation::Sigmoid, x),
            Unary::Sqrt => x.map(f64::sqrt),
        }
    }
}

pub trait Ops {
    type V: Clone;

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor;

    /// Introduces a tensor (input or parameter) into the graph.
    fn leaf(&mut self, t: Tensor) -> Self::V;

    fn ew(&mut self, op: EwOp, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn add_scalar(&mut self, a: &Self::V, s: f64) -> Result<Self::V>;
    fn mul_scalar(&mut self, a: &Self::V, s: f64) -> Result<Self::V>;
    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn reduce(&mut self, op: ReduceOp, a: &Self::V, axes: &[usize]) -> Result<Self::V>;
    fn reshape(&mut self, a: &Self::V, dims: &[usize]) -> Result<Self::V>;
    fn permute(&mut self, a: &Self::V, perm: &[usize]) -> Result<Self::V>;
    fn narrow(&mut self, a: &Self::V, axis: usize, start: usize, len: usize) -> Result<Self::V>;
    fn unary(&mut self, kind: Unary, a: &Self::V) -> Result<Self::V>;
    fn conv2d(
        &mut self,
        x: &Self::V,
        w: &Self::V,
        b: Option<&Self::V>,
        stride: usize,
        pad: usize,
    ) -> Result<Self::V>;
    fn grouped_fc(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>, groups: usize) -> Result<Self::V>;
    fn global_avg_pool(&mut self, x: &Self::V) -> Result<Self::V>;
    fn softmax_cross_entropy(&mut self, logits: &Self::V, labels: &[usize]) -> Result<Self::V>;
    /// Same value, no gradient flows back through it.
    fn detach(&mut self, a: &Self::V) -> Result<Self::V>;

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.ew(EwOp::Add, a, b)
    }
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.ew(EwOp::Sub, a, b)
    }
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.ew(EwOp::Mul, a, b)
    }
    fn div(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.ew(EwOp::Div, a, b)
    }
    fn relu(&mut self, a: &Self::V) -> Result<Self::V> {
        self.unary(Unary::Relu, a)
    }
    fn sigmoid(&mut self, a: &Self::V) -> Result<Self::V> {
        self.unary(Unary::Sigmoid, a)
    }
    fn sqrt(&mut self, a: &Self::V) -> Result<Self::V> {
        self.unary(Unary::Sqrt, a)
    }
    fn sum_all(&mut self, a: &Self::V) -> Result<Self::V> {
        let axes: Vec<usize> = (0..self.value(a).shape().rank()).collect();
        self.reduce(ReduceOp::Sum, a, &axes)
    }
}
