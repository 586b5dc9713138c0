use crate::autodiff::Ops;
use crate::error::{config_err, shape_err, Error, Result};
use crate::tensor::{Fill, Rng, Tensor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

/// Channels per group `g` of the SC-Module's second FC. `Oup` makes the
/// second FC dense.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GroupWidth {
    PerGroup(usize),
    Oup,
}

impl fmt::Display for GroupWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupWidth::PerGroup(g) => write!(f, "{g}"),
            GroupWidth::Oup => write!(f, "oup"),
        }
    }
}

impl FromStr for GroupWidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("oup") {
            return Ok(GroupWidth::Oup);
        }
        match s.parse::<usize>() {
            Ok(g) if g > 0 => Ok(GroupWidth::PerGroup(g)),
            _ => config_err(format!("g must be a positive integer or `oup`, got {s:?}")),
        }
    }
}

impl Serialize for GroupWidth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GroupWidth::PerGroup(g) => s.serialize_u64(*g as u64),
            GroupWidth::Oup => s.serialize_str("oup"),
        }
    }
}

impl<'de> Deserialize<'de> for GroupWidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(serde::de::Error::custom("g must be positive")),
            Raw::Int(g) => Ok(GroupWidth::PerGroup(g as usize)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// SC-Module coefficients for one layer with `channels` inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScConfig {
    pub channels: usize,
    /// Reduction ratio of the first FC.
    pub r: usize,
    pub g: GroupWidth,
}

/// Resolved layer shapes of a valid [`ScConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScGeometry {
    pub channels: usize,
    /// `C / r`, width of the first FC's output.
    pub hidden: usize,
    /// Effective inputs per group `min(g', hidden)`.
    pub group_width: usize,
    /// Group count of the second FC.
    pub groups: usize,
}

impl ScConfig {
    pub fn new(channels: usize, r: usize, g: GroupWidth) -> Self {
        ScConfig { channels, r, g }
    }

    pub fn geometry(&self) -> Result<ScGeometry> {
        let c = self.channels;
        if c == 0 || self.r == 0 {
            return config_err(format!("channels ({c}) and r ({}) must be positive", self.r));
        }
        if c % self.r != 0 {
            return config_err(format!("r={} does not divide C={c}", self.r));
        }
        let hidden = c / self.r;
        let g = match self.g {
            GroupWidth::Oup => hidden,
            GroupWidth::PerGroup(0) => return config_err("g must be positive"),
            GroupWidth::PerGroup(g) => g,
        };
        let group_width = g.min(hidden);
        if hidden % group_width != 0 {
            return config_err(format!("g={group_width} does not divide C/r={hidden}"));
        }
        let groups = hidden / group_width;
        if (2 * c) % groups != 0 {
            return config_err(format!("{groups} groups do not divide 2C={}", 2 * c));
        }
        Ok(ScGeometry {
            channels: c,
            hidden,
            group_width,
            groups,
        })
    }
}

impl ScGeometry {
    /// `C·C/r + min(g', C/r)·2C + 2C`.
    pub fn param_count(&self) -> usize {
        self.channels * self.hidden + self.group_width * 2 * self.channels + 2 * self.channels
    }

    /// Multiply-accumulates of one evaluation: first FC plus grouped second FC.
    pub fn mult_adds(&self) -> usize {
        self.channels * self.hidden + self.group_width * 2 * self.channels
    }
}

/// SC-Module weights: `fc1` is `(C/r, C)` without bias, `fc2_w` is
/// `(2C, group_width)` and `fc2_b` is `(2C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScWeights<V> {
    pub fc1: V,
    pub fc2_w: V,
    pub fc2_b: V,
}

impl<V> ScWeights<V> {
    pub fn map<U>(&self, mut f: impl FnMut(&V) -> U) -> ScWeights<U> {
        ScWeights {
            fc1: f(&self.fc1),
            fc2_w: f(&self.fc2_w),
            fc2_b: f(&self.fc2_b),
        }
    }
}

/// He-normal `fc1`.
pub(crate) fn init_fc1(rows: usize, cols: usize, rng: &mut Rng) -> Result<Tensor> {
    let std = (2.0 / cols as f64).sqrt();
    Tensor::create(Fill::Normal { mean: 0.0, std }, &[rows, cols], rng)
}

/// `(1, …, 1, 0, …, 0)`: the α half starts at one, the λ half at zero.
pub(crate) fn identity_bias(channels: usize) -> Result<Tensor> {
    let mut b = vec![1.0; channels];
    b.extend(std::iter::repeat_n(0.0, channels));
    Tensor::from_vec(&[2 * channels], b)
}

impl ScWeights<Tensor> {
    /// Random `fc1`, zero `fc2` weights and identity bias, so the module
    /// starts out emitting `α = 1, λ = 0` for every input.
    pub fn identity_init(geom: &ScGeometry, rng: &mut Rng) -> Result<Self> {
        Ok(ScWeights {
            fc1: init_fc1(geom.hidden, geom.channels, rng)?,
            fc2_w: Tensor::zeros(&[2 * geom.channels, geom.group_width])?,
            fc2_b: identity_bias(geom.channels)?,
        })
    }
}

/// Splits a `(rows, 2C)` SC output into `α = [:, :C]` and `λ = [:, C:]`.
pub(crate) fn split_affine<G: Ops>(g: &mut G, out: &G::V, channels: usize) -> Result<(G::V, G::V)> {
    Ok((g.narrow(out, 1, 0, channels)?, g.narrow(out, 1, channels, channels)?))
}

/// `h = relu(fc1(features))`, `out = grouped_fc2(h)`; returns `(α, λ)`, each `(N, C)`.
pub fn sc_module_forward<G: Ops>(
    g: &mut G,
    features: &G::V,
    geom: &ScGeometry,
    w: &ScWeights<G::V>,
) -> Result<(G::V, G::V)> {
    let d = g.value(features).dims();
    if d.len() != 2 || d[1] != geom.channels {
        return shape_err(format!(
            "SC-Module expects (N,{}) features, got {}",
            geom.channels,
            g.value(features).shape()
        ));
    }
    let h = g.grouped_fc(features, &w.fc1, None, 1)?;
    let h = g.relu(&h)?;
    let out = g.grouped_fc(&h, &w.fc2_w, Some(&w.fc2_b), geom.groups)?;
    split_affine(g, &out, geom.channels)
}
