//! Declarative model specs, the toy CNN, network instantiation and the
//! analytic cost model.

mod cost;
mod mnv2;
mod network;

pub use cost::{count_params, norm_cost, CostReport, LayerCost};
pub use mnv2::{mobilenetv2_cost_table, published_mnv2_figures, Policy, PublishedFigures};
pub use network::{AffineOut, ForwardOut, Network, Param};

use crate::error::{config_err, Error, Result};
use crate::layers::conv_out_size;
use crate::norm::{DnVariant, GroupWidth, ScConfig, SeParams};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

/// What fills a normalization slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormKind {
    None,
    Bn,
    Dn(DnVariant),
    /// SE block followed by BatchNorm.
    SeBn,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::None => f.write_str("none"),
            NormKind::Bn => f.write_str("bn"),
            NormKind::Dn(v) => write!(f, "{v}"),
            NormKind::SeBn => f.write_str("se"),
        }
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormKind::None),
            "bn" => Ok(NormKind::Bn),
            "se" | "se+bn" => Ok(NormKind::SeBn),
            other => other
                .parse::<DnVariant>()
                .map(NormKind::Dn)
                .map_err(|_| Error::Config(format!("unknown norm kind {s:?} (none|bn|dnb|dnc-a|dnc-b|se)"))),
        }
    }
}

impl Serialize for NormKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NormKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A normalization slot: kind plus the SC/SE coefficients. `r` is used by
/// DN and SE, `g` by DN only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormSpec {
    pub kind: NormKind,
    pub r: usize,
    pub g: GroupWidth,
}

impl NormSpec {
    pub fn new(kind: NormKind, r: usize, g: GroupWidth) -> Self {
        NormSpec { kind, r, g }
    }

    pub fn bn() -> Self {
        NormSpec::new(NormKind::Bn, 1, GroupWidth::Oup)
    }

    /// Fails if `(r, g)` is invalid for `channels`.
    pub fn check(&self, channels: usize) -> Result<()> {
        match self.kind {
            NormKind::None | NormKind::Bn => Ok(()),
            NormKind::Dn(_) => ScConfig::new(channels, self.r, self.g).geometry().map(|_| ()),
            NormKind::SeBn => SeParams::hidden(channels, self.r).map(|_| ()),
        }
    }
}

/// One layer of a [`ModelSpec`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Norm {
        channels: usize,
        norm: NormSpec,
    },
    Relu,
    Gap,
    Fc {
        in_features: usize,
        out_features: usize,
        groups: usize,
        bias: bool,
    },
    Classifier {
        in_features: usize,
        classes: usize,
    },
}

/// Ordered layer list with input shape `(C, H, W)` and class count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub input: [usize; 3],
    pub classes: usize,
}

/// Activation shape between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Feature {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl ModelSpec {
    /// Checks channel chaining, that every conv is followed by a norm slot
    /// and that exactly one classifier ends the model. Returns the feature
    /// shape entering each layer.
    pub(crate) fn trace(&self) -> Result<Vec<Feature>> {
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 || self.classes == 0 {
            return config_err("input extents and class count must be positive");
        }
        let mut feat = Feature::Map { c, h, w };
        let mut shapes = Vec::with_capacity(self.layers.len());
        let last = self.layers.len().checked_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            shapes.push(feat);
            let bad = |msg: String| -> Result<Feature> { config_err(format!("layer {i}: {msg}")) };
            feat = match (*layer, feat) {
                (
                    LayerSpec::Conv {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        ..
                    },
                    Feature::Map { c, h, w },
                ) => {
                    if in_channels != c {
                        bad(format!("conv expects {in_channels} channels, gets {c}"))?;
                    }
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        bad("conv extents must be positive".into())?;
                    }
                    if !matches!(self.layers.get(i + 1), Some(LayerSpec::Norm { .. })) {
                        bad("conv must be followed by a norm slot".into())?;
                    }
                    match (conv_out_size(h, kernel, stride, padding), conv_out_size(w, kernel, stride, padding)) {
                        (Some(h), Some(w)) => Feature::Map { c: out_channels, h, w },
                        _ => bad(format!("kernel {kernel} does not fit a {h}x{w} input"))?,
                    }
                }
                (LayerSpec::Norm { channels, norm }, Feature::Map { c, .. }) => {
                    if channels != c {
                        bad(format!("norm has {channels} channels, input has {c}"))?;
                    }
                    norm.check(c).map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
                    feat
                }
                (LayerSpec::Relu, f) => f,
                (LayerSpec::Gap, Feature::Map { c, .. }) => Feature::Flat(c),
                (
                    LayerSpec::Fc {
                        in_features,
                        out_features,
                        groups,
                        ..
                    },
                    Feature::Flat(f),
                ) => {
                    if in_features != f {
                        bad(format!("fc expects {in_features} features, gets {f}"))?;
                    }
                    if out_features == 0 || groups == 0 || in_features % groups != 0 || out_features % groups != 0 {
                        bad(format!("fc {in_features}->{out_features} cannot use {groups} groups"))?;
                    }
                    Feature::Flat(out_features)
                }
                (LayerSpec::Classifier { in_features, classes }, Feature::Flat(f)) => {
                    if in_features != f {
                        bad(format!("classifier expects {in_features} features, gets {f}"))?;
                    }
                    if classes != self.classes {
                        bad(format!("classifier has {classes} classes, model has {}", self.classes))?;
                    }
                    if Some(i) != last {
                        bad("the classifier must be the last layer".into())?;
                    }
                    Feature::Flat(classes)
                }
                (l, f) => bad(format!("{l:?} cannot follow a {f:?} feature"))?,
            };
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Classifier { .. })) {
            return config_err("model must end in a classifier");
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.trace().map(|_| ())
    }

    pub fn norm_layers(&self) -> impl Iterator<Item = (usize, NormSpec)> + '_ {
        self.layers.iter().filter_map(|l| match l {
            LayerSpec::Norm { channels, norm } => Some((*channels, *norm)),
            _ => None,
        })
    }
}

/// Toy backbone: two 3×3 convs at `16w`, two at `32w` (the first strided),
/// two at `64w` (the first strided), each followed by the chosen norm and a
/// ReLU, then global pooling and a linear classifier.
pub fn build_toycnn(norm: NormSpec, width: f64, classes: usize, input: [usize; 3]) -> Result<ModelSpec> {
    if !(width > 0.0) || !width.is_finite() {
        return config_err(format!("width multiplier must be positive, got {width}"));
    }
    let widths = [16.0, 32.0, 64.0].map(|base: f64| ((base * width).round() as usize).max(1));
    let mut layers = Vec::new();
    let mut c = input[0];
    for (stage, &out) in widths.iter().enumerate() {
        for rep in 0..2 {
            let stride = if stage > 0 && rep == 0 { 2 } else { 1 };
            layers.push(LayerSpec::Conv {
                in_channels: c,
                out_channels: out,
                kernel: 3,
                stride,
                padding: 1,
                bias: norm.kind == NormKind::None,
            });
            layers.push(LayerSpec::Norm { channels: out, norm });
            layers.push(LayerSpec::Relu);
            c = out;
        }
    }
    layers.push(LayerSpec::Gap);
    layers.push(LayerSpec::Classifier { in_features: c, classes });
    let spec = ModelSpec { layers, input, classes };
    spec.validate()?;
    Ok(spec)
}
