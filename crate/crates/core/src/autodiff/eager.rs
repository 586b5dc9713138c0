use super::{Ops, Unary};
use crate::error::Result;
use crate::layers;
use crate::tensor::{self, EwOp, ReduceOp, Tensor};

/// Evaluates graph code directly on tensors, recording nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Ops for Eager {
    type V = Tensor;

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn leaf(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn ew(&mut self, op: EwOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::ew(op, a, b)
    }

    fn add_scalar(&mut self, a: &Tensor, s: f64) -> Result<Tensor> {
        Ok(a.map(|v| v + s))
    }

    fn mul_scalar(&mut self, a: &Tensor, s: f64) -> Result<Tensor> {
        Ok(a.map(|v| v * s))
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::matmul(a, b)
    }

    fn reduce(&mut self, op: ReduceOp, a: &Tensor, axes: &[usize]) -> Result<Tensor> {
        tensor::reduce(op, a, axes)
    }

    fn reshape(&mut self, a: &Tensor, dims: &[usize]) -> Result<Tensor> {
        tensor::reshape(a, dims)
    }

    fn permute(&mut self, a: &Tensor, perm: &[usize]) -> Result<Tensor> {
        tensor::permute(a, perm)
    }

    fn narrow(&mut self, a: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        tensor::narrow(a, axis, start, len)
    }

    fn unary(&mut self, kind: Unary, a: &Tensor) -> Result<Tensor> {
        Ok(kind.apply(a))
    }

    fn conv2d(&mut self, x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
        layers::conv2d_forward(x, w, b, stride, pad)
    }

    fn grouped_fc(&mut self, x: &Tensor, w: &Tensor, b: Option<&Tensor>, groups: usize) -> Result<Tensor> {
        layers::grouped_fc_forward(x, w, b, groups)
    }

    fn global_avg_pool(&mut self, x: &Tensor) -> Result<Tensor> {
        layers::global_avg_pool(x)
    }

    fn softmax_cross_entropy(&mut self, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
        layers::softmax_cross_entropy(logits, labels).map(Tensor::scalar)
    }

    fn detach(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(a.clone())
    }
}
