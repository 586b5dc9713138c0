use super::{Ops, Unary};
use crate::error::{Error, Result};
use crate::layers;
use crate::tensor::{self, reduce_broadcast, Broadcast, EwOp, ReduceMap, ReduceOp, Tensor};
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a node on a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Ew { op: EwOp, a: usize, b: usize },
    AddScalar { a: usize },
    MulScalar { a: usize, s: f64 },
    Matmul { a: usize, b: usize },
    Reduce { op: ReduceOp, a: usize, axes: Vec<usize> },
    Reshape { a: usize },
    Permute { a: usize, perm: Vec<usize> },
    Narrow { a: usize, axis: usize, start: usize },
    Unary { kind: Unary, a: usize },
    Conv { x: usize, w: usize, b: Option<usize>, stride: usize, pad: usize },
    Fc { x: usize, w: usize, b: Option<usize>, groups: usize },
    Gap { x: usize },
    SoftmaxCe { logits: usize, labels: Vec<usize> },
    Detach,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations in execution order; parents always precede children.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    differentiated: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`. Leaves always have an
    /// entry (zeros when the loss does not depend on them).
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    *slot = Some(match slot.take() {
        Some(prev) => prev.zip_map(&g, |a, b| a + b).expect("gradient shapes agree"),
        None => g,
    });
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: fresh_id(),
            nodes: Vec::new(),
            differentiated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all nodes. Handles from before the reset are rejected afterwards.
    pub fn reset(&mut self) {
        self.id = fresh_id();
        self.nodes.clear();
        self.differentiated = false;
    }

    fn idx(&self, v: &Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::Autodiff(format!(
                "variable from tape {} used on tape {}",
                v.tape, self.id
            )));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let root = self.idx(&loss)?;
        if self.differentiated {
            return Err(Error::Autodiff("backward already ran on this tape; reset it first".into()));
        }
        if self.val(root).numel() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must have exactly one element, has shape {}",
                self.val(root).shape()
            )));
        }
        self.differentiated = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root] = Some(self.val(root).map(|_| 1.0));
        for i in (0..=root).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(node.value.zeros_like());
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = self.val(i);
        match &self.nodes[i].op {
            Op::Leaf | Op::Detach => {}
            &Op::Ew { op, a, b } => {
                let (av, bv) = (self.val(a), self.val(b));
                let (ga, gb) = match op {
                    EwOp::Add => (g.clone(), g.clone()),
                    EwOp::Sub => (g.clone(), g.map(|v| -v)),
                    EwOp::Mul => (tensor::ew(EwOp::Mul, g, bv)?, g.zip_map(av, |x, y| x * y)?),
                    EwOp::Div => {
                        let ga = tensor::ew(EwOp::Div, g, bv)?;
                        let gb = tensor::ew(EwOp::Div, &g.zip_map(out, |x, y| -x * y)?, bv)?;
                        (ga, gb)
                    }
                    EwOp::Max => {
                        let bc = Broadcast::resolve(av.shape(), bv.shape())?;
                        let mut ga = g.clone().into_data();
                        let mut gb = vec![0.0; g.numel()];
                        for (j, (&x, gv)) in av.data().iter().zip(ga.iter_mut()).enumerate() {
                            if !(x >= bv.data()[bc.index(j)]) {
                                gb[j] = *gv;
                                *gv = 0.0;
                            }
                        }
                        (
                            Tensor::from_vec(g.dims(), ga)?,
                            Tensor::from_vec(g.dims(), gb)?,
                        )
                    }
                };
                accumulate(&mut grads[a], ga);
                accumulate(&mut grads[b], reduce_broadcast(&gb, bv.shape())?);
            }
            &Op::AddScalar { a } => accumulate(&mut grads[a], g.clone()),
            &Op::MulScalar { a, s } => accumulate(&mut grads[a], g.map(|v| v * s)),
            &Op::Matmul { a, b } => {
                let (av, bv) = (self.val(a), self.val(b));
                let ga = tensor::matmul(g, &tensor::permute(bv, &[1, 0])?)?;
                let gb = tensor::matmul(&tensor::permute(av, &[1, 0])?, g)?;
                accumulate(&mut grads[a], ga);
                accumulate(&mut grads[b], gb);
            }
            Op::Reduce { op, a, axes } => {
                let av = self.val(*a);
                let map = ReduceMap::new(av.shape(), axes)?;
                let count = map.count as f64;
                let expanded = map.expand(g);
                let ga = match op {
                    ReduceOp::Sum => expanded,
                    ReduceOp::Mean => expanded.map(|v| v / count),
                    ReduceOp::Var => {
                        let mean = map.expand(&tensor::reduce(ReduceOp::Mean, av, axes)?);
                        let mut data = expanded.into_data();
                        for ((d, &x), &m) in data.iter_mut().zip(av.data()).zip(mean.data()) {
                            *d *= 2.0 * (x - m) / count;
                        }
                        Tensor::from_vec(av.dims(), data)?
                    }
                };
                accumulate(&mut grads[*a], ga);
            }
            &Op::Reshape { a } => {
                let ga = tensor::reshape(g, self.val(a).dims())?;
                accumulate(&mut grads[a], ga);
            }
            Op::Permute { a, perm } => {
                let ga = tensor::permute(g, &tensor::inverse_permutation(perm))?;
                accumulate(&mut grads[*a], ga);
            }
            &Op::Narrow { a, axis, start } => {
                let ga = tensor::unnarrow(g, self.val(a).shape(), axis, start);
                accumulate(&mut grads[a], ga);
            }
            &Op::Unary { kind, a } => {
                let av = self.val(a);
                let ga = match kind {
                    // Subgradient 0 at exactly 0.
                    Unary::Relu => g.zip_map(av, |gv, x| if x > 0.0 { gv } else { 0.0 })?,
                    Unary::Sigmoid => g.zip_map(out, |gv, s| gv * s * (1.0 - s))?,
                    Unary::Sqrt => g.zip_map(out, |gv, r| gv / (2.0 * r))?,
                };
                accumulate(&mut grads[a], ga);
            }
            &Op::Conv { x, w, b, stride, pad } => {
                let (dx, dw, db) = layers::conv2d_backward(self.val(x), self.val(w), g, stride, pad)?;
                accumulate(&mut grads[x], dx);
                accumulate(&mut grads[w], dw);
                if let Some(b) = b {
                    accumulate(&mut grads[b], db);
                }
            }
            &Op::Fc { x, w, b, groups } => {
                let (dx, dw, db) = layers::grouped_fc_backward(self.val(x), self.val(w), g, groups)?;
                accumulate(&mut grads[x], dx);
                accumulate(&mut grads[w], dw);
                if let Some(b) = b {
                    accumulate(&mut grads[b], db);
                }
            }
            &Op::Gap { x } => {
                let gx = layers::global_avg_pool_backward(g, self.val(x).shape());
                accumulate(&mut grads[x], gx);
            }
            Op::SoftmaxCe { logits, labels } => {
                let upstream = g.data()[0];
                let gl = layers::softmax_cross_entropy_backward(self.val(*logits), labels, upstream)?;
                accumulate(&mut grads[*logits], gl);
            }
        }
        Ok(())
    }
}

impl Ops for Tape {
    type V = Var;

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    fn ew(&mut self, op: EwOp, a: &Var, b: &Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let v = tensor::ew(op, self.val(a), self.val(b))?;
        Ok(self.push(v, Op::Ew { op, a, b }))
    }

    fn add_scalar(&mut self, a: &Var, s: f64) -> Result<Var> {
        let a = self.idx(a)?;
        let v = self.val(a).map(|x| x + s);
        Ok(self.push(v, Op::AddScalar { a }))
    }

    fn mul_scalar(&mut self, a: &Var, s: f64) -> Result<Var> {
        let a = self.idx(a)?;
        let v = self.val(a).map(|x| x * s);
        Ok(self.push(v, Op::MulScalar { a, s }))
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let v = tensor::matmul(self.val(a), self.val(b))?;
        Ok(self.push(v, Op::Matmul { a, b }))
    }

    fn reduce(&mut self, op: ReduceOp, a: &Var, axes: &[usize]) -> Result<Var> {
        let a = self.idx(a)?;
        let v = tensor::reduce(op, self.val(a), axes)?;
        Ok(self.push(v, Op::Reduce { op, a, axes: axes.to_vec() }))
    }

    fn reshape(&mut self, a: &Var, dims: &[usize]) -> Result<Var> {
        let a = self.idx(a)?;
        let v = tensor::reshape(self.val(a), dims)?;
        Ok(self.push(v, Op::Reshape { a }))
    }

    fn permute(&mut self, a: &Var, perm: &[usize]) -> Result<Var> {
        let a = self.idx(a)?;
        let v = tensor::permute(self.val(a), perm)?;
        Ok(self.push(v, Op::Permute { a, perm: perm.to_vec() }))
    }

    fn narrow(&mut self, a: &Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let a = self.idx(a)?;
        let v = tensor::narrow(self.val(a), axis, start, len)?;
        Ok(self.push(v, Op::Narrow { a, axis, start }))
    }

    fn unary(&mut self, kind: Unary, a: &Var) -> Result<Var> {
        let a = self.idx(a)?;
        let v = kind.apply(self.val(a));
        Ok(self.push(v, Op::Unary { kind, a }))
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, stride: usize, pad: usize) -> Result<Var> {
        let (x, w) = (self.idx(x)?, self.idx(w)?);
        let b = b.map(|b| self.idx(b)).transpose()?;
        let v = layers::conv2d_forward(self.val(x), self.val(w), b.map(|b| self.val(b)), stride, pad)?;
        Ok(self.push(v, Op::Conv { x, w, b, stride, pad }))
    }

    fn grouped_fc(&mut self, x: &Var, w: &Var, b: Option<&Var>, groups: usize) -> Result<Var> {
        let (x, w) = (self.idx(x)?, self.idx(w)?);
        let b = b.map(|b| self.idx(b)).transpose()?;
        let v = layers::grouped_fc_forward(self.val(x), self.val(w), b.map(|b| self.val(b)), groups)?;
        Ok(self.push(v, Op::Fc { x, w, b, groups }))
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        let x = self.idx(x)?;
        let v = layers::global_avg_pool(self.val(x))?;
        Ok(self.push(v, Op::Gap { x }))
    }

    fn softmax_cross_entropy(&mut self, logits: &Var, labels: &[usize]) -> Result<Var> {
        let logits = self.idx(logits)?;
        let v = layers::softmax_cross_entropy(self.val(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(v),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    fn detach(&mut self, a: &Var) -> Result<Var> {
        let a = self.idx(a)?;
        let v = self.val(a).clone();
        Ok(self.push(v, Op::Detach))
    }
}
