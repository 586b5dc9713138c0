//! Normalization layers.
//!
//! All layers share [`normalize`]: per-channel standardization with batch
//! statistics in training mode and running statistics in evaluation mode.
//! They differ only in where the affine scale and shift come from:
//!
//! - BatchNorm: static per-channel `γ, β`.
//! - SE + BN: an SE block rescales the input before BatchNorm.
//! - DN-B: an SC-Module maps each sample's pooled features to per-sample,
//!   per-channel `(α, λ)`.
//! - DN-C: an SC-Module maps the batch mean and standard deviation to
//!   batch-shared `(α, λ)`.

mod bn;
mod dn;
mod sc;
mod se;

pub use bn::{bn_forward, BnState};
pub use dn::{dn_forward, dnb_forward, dnc_forward, DnOutput, DnState, DnVariant, DnWeights};
pub use sc::{sc_module_forward, GroupWidth, ScConfig, ScGeometry, ScWeights};
pub use se::{se_attention, se_bn_forward, se_forward, SeParams};

use crate::autodiff::Ops;
use crate::error::{shape_err, Result};
use crate::tensor::{reduce, ReduceOp, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Explicit train/eval switch; nothing in this module keeps ambient mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Exponential running mean/variance used in evaluation mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(RunningStats {
            mean: Tensor::zeros(&[channels])?,
            var: Tensor::ones(&[channels])?,
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        })
    }

    pub fn channels(&self) -> usize {
        self.mean.numel()
    }

    /// `running ← (1−m)·running + m·batch`, with the unbiased batch variance.
    pub fn update(&mut self, batch_mean: &Tensor, batch_var: &Tensor, count: usize) -> Result<()> {
        let m = self.momentum;
        let correction = if count > 1 {
            count as f64 / (count - 1) as f64
        } else {
            1.0
        };
        self.mean = self.mean.zip_map(batch_mean, |r, b| (1.0 - m) * r + m * b)?;
        self.var = self.var.zip_map(batch_var, |r, b| (1.0 - m) * r + m * b * correction)?;
        Ok(())
    }
}

fn check_nchw(x: &Tensor, channels: usize) -> Result<()> {
    let d = x.dims();
    if d.len() != 4 {
        return shape_err(format!("normalization expects NCHW input, got {}", x.shape()));
    }
    if d[1] != channels {
        return shape_err(format!("input has {} channels, layer has {channels}", d[1]));
    }
    Ok(())
}

/// Per-channel mean and population variance over `{N, H, W}`.
pub fn batch_stats(x: &Tensor) -> Result<(Tensor, Tensor)> {
    if x.dims().len() != 4 {
        return shape_err(format!("batch_stats expects NCHW input, got {}", x.shape()));
    }
    Ok((
        reduce(ReduceOp::Mean, x, &[0, 2, 3])?,
        reduce(ReduceOp::Var, x, &[0, 2, 3])?,
    ))
}

/// Standardized input plus the per-channel statistics it used.
pub struct Normalized<V> {
    pub out: V,
    pub mean: V,
    /// `sqrt(var + eps)`.
    pub std: V,
}

/// `(X − E[X]) / sqrt(Var[X] + eps)` per channel. Training mode uses batch
/// statistics (gradients flow through them) and updates `stats`; evaluation
/// mode reads `stats` and leaves it untouched.
pub fn normalize<G: Ops>(g: &mut G, x: &G::V, stats: &mut RunningStats, mode: Mode) -> Result<Normalized<G::V>> {
    check_nchw(g.value(x), stats.channels())?;
    let (mean, var) = match mode {
        Mode::Train => {
            let mean = g.reduce(ReduceOp::Mean, x, &[0, 2, 3])?;
            let var = g.reduce(ReduceOp::Var, x, &[0, 2, 3])?;
            let d = g.value(x).dims();
            let count = d[0] * d[2] * d[3];
            let (mv, vv) = (g.value(&mean).clone(), g.value(&var).clone());
            stats.update(&mv, &vv, count)?;
            (mean, var)
        }
        Mode::Eval => (g.leaf(stats.mean.clone()), g.leaf(stats.var.clone())),
    };
    let centered = g.sub(x, &mean)?;
    let std = g.add_scalar(&var, stats.eps)?;
    let std = g.sqrt(&std)?;
    let out = g.div(&centered, &std)?;
    Ok(Normalized { out, mean, std })
}
