use super::sc::{identity_bias, init_fc1, split_affine};
use super::{normalize, sc_module_forward, Mode, RunningStats, ScConfig, ScGeometry, ScWeights};
use crate::autodiff::{Eager, Ops};
use crate::error::{config_err, shape_err, Error, Result};
use crate::tensor::{Rng, Tensor};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Which statistics feed the SC-Module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DnVariant {
    /// Per-sample pooled features; `(α, λ)` are `(N, C)`.
    #[serde(rename = "dnb")]
    B,
    /// Batch mean and std merged after the first FC; `(α, λ)` are `(C)`.
    #[serde(rename = "dnc-a")]
    CA,
    /// Batch mean and std merged after the second FC.
    #[serde(rename = "dnc-b")]
    CB,
}

impl fmt::Display for DnVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DnVariant::B => "dnb",
            DnVariant::CA => "dnc-a",
            DnVariant::CB => "dnc-b",
        })
    }
}

impl FromStr for DnVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dnb" => Ok(DnVariant::B),
            "dnc-a" => Ok(DnVariant::CA),
            "dnc-b" => Ok(DnVariant::CB),
            _ => config_err(format!("unknown DN variant {s:?}")),
        }
    }
}

/// SC-Module weights of one DN layer.
///
/// `fc1*` are `(C/r, C)` without bias. Second-stage weights are
/// `(2C, group_width)`; only one `(2C)` bias exists per layer.
#[derive(Clone, Debug, PartialEq)]
pub enum DnWeights<V> {
    B(ScWeights<V>),
    CA {
        fc1_mean: V,
        fc1_std: V,
        fc2_w: V,
        fc2_b: V,
    },
    CB {
        fc1_mean: V,
        fc1_std: V,
        fc2_mean_w: V,
        fc2_mean_b: V,
        fc2_std_w: V,
    },
}

impl DnVariant {
    /// Parameter names in the order used by [`DnWeights::parts`].
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            DnVariant::B => &["fc1", "fc2_w", "fc2_b"],
            DnVariant::CA => &["fc1_mean", "fc1_std", "fc2_w", "fc2_b"],
            DnVariant::CB => &["fc1_mean", "fc1_std", "fc2_mean_w", "fc2_mean_b", "fc2_std_w"],
        }
    }

    /// Parameter shapes in [`DnVariant::param_names`] order.
    pub fn param_shapes(self, geom: &ScGeometry) -> Vec<Vec<usize>> {
        let (c, h, w) = (geom.channels, geom.hidden, geom.group_width);
        let fc1 = vec![h, c];
        let fc2 = vec![2 * c, w];
        let bias = vec![2 * c];
        match self {
            DnVariant::B => vec![fc1, fc2, bias],
            DnVariant::CA => vec![fc1.clone(), fc1, fc2, bias],
            DnVariant::CB => vec![fc1.clone(), fc1, fc2.clone(), bias, fc2],
        }
    }

    pub fn param_count(self, geom: &ScGeometry) -> usize {
        self.param_shapes(geom).iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn is_batch_shared(self) -> bool {
        self != DnVariant::B
    }
}

impl<V> DnWeights<V> {
    pub fn variant(&self) -> DnVariant {
        match self {
            DnWeights::B(_) => DnVariant::B,
            DnWeights::CA { .. } => DnVariant::CA,
            DnWeights::CB { .. } => DnVariant::CB,
        }
    }

    /// `(name, value)` pairs in [`DnVariant::param_names`] order.
    pub fn parts(&self) -> Vec<(&'static str, &V)> {
        let values: Vec<&V> = match self {
            DnWeights::B(w) => vec![&w.fc1, &w.fc2_w, &w.fc2_b],
            DnWeights::CA {
                fc1_mean,
                fc1_std,
                fc2_w,
                fc2_b,
            } => vec![fc1_mean, fc1_std, fc2_w, fc2_b],
            DnWeights::CB {
                fc1_mean,
                fc1_std,
                fc2_mean_w,
                fc2_mean_b,
                fc2_std_w,
            } => vec![fc1_mean, fc1_std, fc2_mean_w, fc2_mean_b, fc2_std_w],
        };
        self.variant().param_names().iter().copied().zip(values).collect()
    }

    /// Inverse of [`DnWeights::parts`].
    pub fn from_parts(variant: DnVariant, parts: Vec<V>) -> Result<Self> {
        let expected = variant.param_names().len();
        if parts.len() != expected {
            return config_err(format!("{variant} expects {expected} tensors, got {}", parts.len()));
        }
        let mut it = parts.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(match variant {
            DnVariant::B => DnWeights::B(ScWeights {
                fc1: next(),
                fc2_w: next(),
                fc2_b: next(),
            }),
            DnVariant::CA => DnWeights::CA {
                fc1_mean: next(),
                fc1_std: next(),
                fc2_w: next(),
                fc2_b: next(),
            },
            DnVariant::CB => DnWeights::CB {
                fc1_mean: next(),
                fc1_std: next(),
                fc2_mean_w: next(),
                fc2_mean_b: next(),
                fc2_std_w: next(),
            },
        })
    }

    pub fn map<U>(&self, f: impl FnMut(&V) -> U) -> DnWeights<U> {
        let variant = self.variant();
        let mapped = self.parts().into_iter().map(|(_, v)| v).map(f).collect();
        DnWeights::from_parts(variant, mapped).expect("same variant")
    }
}

impl DnWeights<Tensor> {
    /// He-normal first FCs, zero second-stage weights and a `(1…1, 0…0)`
    /// bias, so the layer starts out as BatchNorm with `γ = 1, β = 0`.
    pub fn identity_init(variant: DnVariant, geom: &ScGeometry, rng: &mut Rng) -> Result<Self> {
        let (c, h, w) = (geom.channels, geom.hidden, geom.group_width);
        Ok(match variant {
            DnVariant::B => DnWeights::B(ScWeights::identity_init(geom, rng)?),
            DnVariant::CA => DnWeights::CA {
                fc1_mean: init_fc1(h, c, rng)?,
                fc1_std: init_fc1(h, c, rng)?,
                fc2_w: Tensor::zeros(&[2 * c, w])?,
                fc2_b: identity_bias(c)?,
            },
            DnVariant::CB => DnWeights::CB {
                fc1_mean: init_fc1(h, c, rng)?,
                fc1_std: init_fc1(h, c, rng)?,
                fc2_mean_w: Tensor::zeros(&[2 * c, w])?,
                fc2_mean_b: identity_bias(c)?,
                fc2_std_w: Tensor::zeros(&[2 * c, w])?,
            },
        })
    }
}

/// Layer output plus the affine coefficients that produced it. `α, λ` are
/// `(N, C)` for DN-B and `(C)` for DN-C.
pub struct DnOutput<V> {
    pub out: V,
    pub alpha: V,
    pub lambda: V,
}

/// Eager DN layer: SC-Module weights plus running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct DnState {
    pub geom: ScGeometry,
    pub weights: DnWeights<Tensor>,
    pub stats: RunningStats,
}

impl DnState {
    pub fn new(variant: DnVariant, cfg: ScConfig, rng: &mut Rng) -> Result<Self> {
        let geom = cfg.geometry()?;
        Ok(DnState {
            weights: DnWeights::identity_init(variant, &geom, rng)?,
            stats: RunningStats::new(geom.channels)?,
            geom,
        })
    }

    pub fn variant(&self) -> DnVariant {
        self.weights.variant()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<DnOutput<Tensor>> {
        let w = self.weights.clone();
        dn_forward(&mut Eager, x, &self.geom, &w, &mut self.stats, mode)
    }
}

/// Dispatches on the weight variant.
pub fn dn_forward<G: Ops>(
    g: &mut G,
    x: &G::V,
    geom: &ScGeometry,
    w: &DnWeights<G::V>,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<DnOutput<G::V>> {
    match w {
        DnWeights::B(sc) => dnb_forward(g, x, geom, sc, stats, mode),
        _ => dnc_forward(g, x, geom, w, stats, mode),
    }
}

/// `X̂ = X̃ ⊙ α + λ` with `(α, λ) = SC(gap(X))` per sample.
pub fn dnb_forward<G: Ops>(
    g: &mut G,
    x: &G::V,
    geom: &ScGeometry,
    w: &ScWeights<G::V>,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<DnOutput<G::V>> {
    let n = normalize(g, x, stats, mode)?;
    let pooled = g.global_avg_pool(x)?;
    let (alpha, lambda) = sc_module_forward(g, &pooled, geom, w)?;
    let scaled = g.mul(&n.out, &alpha)?;
    let out = g.add(&scaled, &lambda)?;
    Ok(DnOutput { out, alpha, lambda })
}

/// DN-C: the SC-Module reads the per-channel mean and `sqrt(var + eps)` used
/// by the normalization (batch statistics in training, running statistics in
/// evaluation) and emits one `(α, λ)` shared by the whole batch.
pub fn dnc_forward<G: Ops>(
    g: &mut G,
    x: &G::V,
    geom: &ScGeometry,
    w: &DnWeights<G::V>,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<DnOutput<G::V>> {
    let n = normalize(g, x, stats, mode)?;
    let c = geom.channels;
    let mean = g.reshape(&n.mean, &[1, c])?;
    let std = g.reshape(&n.std, &[1, c])?;
    let out = match w {
        DnWeights::B(_) => return shape_err("dnc_forward needs DN-C weights"),
        DnWeights::CA {
            fc1_mean,
            fc1_std,
            fc2_w,
            fc2_b,
        } => {
            let hm = g.grouped_fc(&mean, fc1_mean, None, 1)?;
            let hs = g.grouped_fc(&std, fc1_std, None, 1)?;
            let h = g.add(&hm, &hs)?;
            let h = g.relu(&h)?;
            g.grouped_fc(&h, fc2_w, Some(fc2_b), geom.groups)?
        }
        DnWeights::CB {
            fc1_mean,
            fc1_std,
            fc2_mean_w,
            fc2_mean_b,
            fc2_std_w,
        } => {
            let hm = g.grouped_fc(&mean, fc1_mean, None, 1)?;
            let hm = g.relu(&hm)?;
            let om = g.grouped_fc(&hm, fc2_mean_w, Some(fc2_mean_b), geom.groups)?;
            let hs = g.grouped_fc(&std, fc1_std, None, 1)?;
            let hs = g.relu(&hs)?;
            let os = g.grouped_fc(&hs, fc2_std_w, None, geom.groups)?;
            g.add(&om, &os)?
        }
    };
    let (alpha, lambda) = split_affine(g, &out, c)?;
    let alpha = g.reshape(&alpha, &[c])?;
    let lambda = g.reshape(&lambda, &[c])?;
    let scaled = g.mul(&n.out, &alpha)?;
    let out = g.add(&scaled, &lambda)?;
    Ok(DnOutput { out, alpha, lambda })
}
