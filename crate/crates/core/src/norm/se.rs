use super::{bn_forward, Mode, RunningStats};
use crate::autodiff::Ops;
use crate::error::{config_err, Result};
use crate::tensor::{Fill, Rng, Tensor};

/// Squeeze-and-excitation weights: `fc1` maps `C -> C/r`, `fc2` maps back.
/// Both FCs carry a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct SeParams<V> {
    pub fc1_w: V,
    pub fc1_b: V,
    pub fc2_w: V,
    pub fc2_b: V,
}

impl<V> SeParams<V> {
    pub fn map<U>(&self, mut f: impl FnMut(&V) -> U) -> SeParams<U> {
        SeParams {
            fc1_w: f(&self.fc1_w),
            fc1_b: f(&self.fc1_b),
            fc2_w: f(&self.fc2_w),
            fc2_b: f(&self.fc2_b),
        }
    }
}

impl SeParams<Tensor> {
    pub fn hidden(channels: usize, r: usize) -> Result<usize> {
        if r == 0 || channels % r != 0 {
            return config_err(format!("SE reduction r={r} does not divide C={channels}"));
        }
        Ok(channels / r)
    }

    pub fn param_count(channels: usize, r: usize) -> Result<usize> {
        let h = Self::hidden(channels, r)?;
        Ok(2 * channels * h + h + channels)
    }

    /// He-normal weights, zero biases.
    pub fn init(channels: usize, r: usize, rng: &mut Rng) -> Result<Self> {
        let h = Self::hidden(channels, r)?;
        let he = |fan_in: usize| Fill::Normal {
            mean: 0.0,
            std: (2.0 / fan_in as f64).sqrt(),
        };
        Ok(SeParams {
            fc1_w: Tensor::create(he(channels), &[h, channels], rng)?,
            fc1_b: Tensor::zeros(&[h])?,
            fc2_w: Tensor::create(he(h), &[channels, h], rng)?,
            fc2_b: Tensor::zeros(&[channels])?,
        })
    }
}

/// `α = sigmoid(fc2(relu(fc1(gap(X)))))`, shape `(N, C)`.
pub fn se_attention<G: Ops>(g: &mut G, x: &G::V, p: &SeParams<G::V>) -> Result<G::V> {
    let pooled = g.global_avg_pool(x)?;
    let h = g.grouped_fc(&pooled, &p.fc1_w, Some(&p.fc1_b), 1)?;
    let h = g.relu(&h)?;
    let a = g.grouped_fc(&h, &p.fc2_w, Some(&p.fc2_b), 1)?;
    g.sigmoid(&a)
}

/// `α ⊙ X` with per-sample, per-channel `α`.
pub fn se_forward<G: Ops>(g: &mut G, x: &G::V, p: &SeParams<G::V>) -> Result<G::V> {
    let a = se_attention(g, x, p)?;
    g.mul(x, &a)
}

/// BatchNorm applied to the SE-rescaled input.
pub fn se_bn_forward<G: Ops>(
    g: &mut G,
    x: &G::V,
    se: &SeParams<G::V>,
    gamma: &G::V,
    beta: &G::V,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<G::V> {
    let scaled = se_forward(g, x, se)?;
    bn_forward(g, &scaled, gamma, beta, stats, mode)
}
