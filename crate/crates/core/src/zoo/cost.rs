use super::{Feature, LayerSpec, ModelSpec, NormKind, NormSpec};
use crate::error::Result;
use crate::layers::fc_param_count;
use crate::norm::{DnVariant, ScConfig, SeParams};
use serde::Serialize;

/// Cost of one layer. Mult-Adds count one multiply-accumulate per fused op
/// for a single sample; bias and normalization arithmetic are excluded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: String,
    pub params: usize,
    pub mult_adds: usize,
}

/// Totals plus the per-layer entries they are summed from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub params: usize,
    pub mult_adds: usize,
    pub per_layer: Vec<LayerCost>,
}

impl CostReport {
    pub(crate) fn from_layers(per_layer: Vec<LayerCost>) -> Self {
        CostReport {
            params: per_layer.iter().map(|l| l.params).sum(),
            mult_adds: per_layer.iter().map(|l| l.mult_adds).sum(),
            per_layer,
        }
    }
}

/// `(params, mult_adds)` of one normalization slot over `channels`.
pub fn norm_cost(norm: &NormSpec, channels: usize) -> Result<(usize, usize)> {
    let c = channels;
    Ok(match norm.kind {
        NormKind::None => (0, 0),
        NormKind::Bn => (2 * c, 0),
        NormKind::SeBn => {
            let h = SeParams::hidden(c, norm.r)?;
            (SeParams::param_count(c, norm.r)? + 2 * c, 2 * c * h)
        }
        NormKind::Dn(v) => {
            let geom = ScConfig::new(c, norm.r, norm.g).geometry()?;
            let second = geom.group_width * 2 * c;
            let ma = match v {
                DnVariant::B => geom.mult_adds(),
                DnVariant::CA => 2 * c * geom.hidden + second,
                DnVariant::CB => 2 * c * geom.hidden + 2 * second,
            };
            (v.param_count(&geom), ma)
        }
    })
}

/// Layer names shared by the cost report and instantiated networks:
/// `conv{i}`, `norm{i}`, `fc{i}` and `classifier`; ReLU and pooling are
/// named `relu{i}` and `gap{i}`.
pub(crate) fn layer_names(spec: &ModelSpec) -> Vec<String> {
    let mut counters = [0usize; 5];
    spec.layers
        .iter()
        .map(|l| {
            let (slot, base) = match l {
                LayerSpec::Conv { .. } => (0, "conv"),
                LayerSpec::Norm { .. } => (1, "norm"),
                LayerSpec::Relu => (2, "relu"),
                LayerSpec::Gap => (3, "gap"),
                LayerSpec::Fc { .. } => (4, "fc"),
                LayerSpec::Classifier { .. } => return "classifier".to_string(),
            };
            let name = format!("{base}{}", counters[slot]);
            counters[slot] += 1;
            name
        })
        .collect()
}

/// Exact analytic parameter and Mult-Adds counts at the spec's input size.
pub fn count_params(spec: &ModelSpec) -> Result<CostReport> {
    let shapes = spec.trace()?;
    let names = layer_names(spec);
    let mut per_layer = Vec::with_capacity(spec.layers.len());
    for ((layer, feat), name) in spec.layers.iter().zip(&shapes).zip(names) {
        let (kind, params, mult_adds) = match *layer {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                bias,
            } => {
                let Feature::Map { h, w, .. } = *feat else { unreachable!("validated") };
                let oh = (h + 2 * padding - kernel) / stride + 1;
                let ow = (w + 2 * padding - kernel) / stride + 1;
                let per_pixel = out_channels * in_channels * kernel * kernel;
                ("conv".to_string(), per_pixel + if bias { out_channels } else { 0 }, per_pixel * oh * ow)
            }
            LayerSpec::Norm { channels, norm } => {
                let (p, m) = norm_cost(&norm, channels)?;
                (norm.kind.to_string(), p, m)
            }
            LayerSpec::Relu => ("relu".to_string(), 0, 0),
            LayerSpec::Gap => ("gap".to_string(), 0, 0),
            LayerSpec::Fc {
                in_features,
                out_features,
                groups,
                bias,
            } => (
                "fc".to_string(),
                fc_param_count(in_features, out_features, groups, bias),
                in_features * out_features / groups,
            ),
            LayerSpec::Classifier { in_features, classes } => (
                "classifier".to_string(),
                fc_param_count(in_features, classes, 1, true),
                in_features * classes,
            ),
        };
        per_layer.push(LayerCost {
            name,
            kind,
            params,
            mult_adds,
        });
    }
    Ok(CostReport::from_layers(per_layer))
}
