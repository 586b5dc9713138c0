//! Analytic cost of MobileNetV2 (width 1.0, 224² input, 100 classes) with
//! some of its BatchNorm layers swapped for another norm kind.

use super::{CostReport, LayerCost, NormKind, NormSpec};
use crate::error::{config_err, Error, Result};
use crate::norm::{DnVariant, GroupWidth};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Which BatchNorm layers are replaced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Every BatchNorm, including the stem and the final 1×1 conv.
    AllBn,
    /// Only the BatchNorm after each block's expansion conv.
    ExpandOnly,
    /// Only the BatchNorm after each block's projection conv.
    ProjectOnly,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::AllBn => "all-bn",
            Policy::ExpandOnly => "expand-only",
            Policy::ProjectOnly => "project-only",
        })
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-bn" => Ok(Policy::AllBn),
            "expand-only" => Ok(Policy::ExpandOnly),
            "project-only" => Ok(Policy::ProjectOnly),
            _ => config_err(format!("unknown policy {s:?} (all-bn|expand-only|project-only)")),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Stem,
    Expand,
    Depthwise,
    Project,
    Last,
}

struct Conv {
    name: String,
    role: Role,
    cin: usize,
    cout: usize,
    kernel: usize,
    groups: usize,
    out_size: usize,
}

const RESOLUTION: usize = 224;
const CLASSES: usize = 100;
const LAST_CHANNELS: usize = 1280;
/// Inverted-residual settings `(expansion t, channels c, repeats n, stride s)`.
const BLOCKS: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

fn convs() -> Vec<Conv> {
    let mut out = Vec::new();
    let mut size = RESOLUTION / 2;
    out.push(Conv {
        name: "stem".into(),
        role: Role::Stem,
        cin: 3,
        cout: 32,
        kernel: 3,
        groups: 1,
        out_size: size,
    });
    let mut cin = 32;
    let mut block = 0;
    for (t, c, n, s) in BLOCKS {
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            let hidden = cin * t;
            if t != 1 {
                out.push(Conv {
                    name: format!("block{block}/expand"),
                    role: Role::Expand,
                    cin,
                    cout: hidden,
                    kernel: 1,
                    groups: 1,
                    out_size: size,
                });
            }
            size /= stride;
            out.push(Conv {
                name: format!("block{block}/dw"),
                role: Role::Depthwise,
                cin: hidden,
                cout: hidden,
                kernel: 3,
                groups: hidden,
                out_size: size,
            });
            out.push(Conv {
                name: format!("block{block}/project"),
                role: Role::Project,
                cin: hidden,
                cout: c,
                kernel: 1,
                groups: 1,
                out_size: size,
            });
            cin = c;
            block += 1;
        }
    }
    out.push(Conv {
        name: "last".into(),
        role: Role::Last,
        cin,
        cout: LAST_CHANNELS,
        kernel: 1,
        groups: 1,
        out_size: size,
    });
    out
}

/// Formula-only norm cost: `hidden = max(1, ⌊C/r⌋)` and no divisibility
/// requirement, so every MobileNetV2 width is admissible.
fn formula_norm_cost(norm: &NormSpec, c: usize) -> Result<(usize, usize)> {
    if norm.r == 0 {
        return config_err("r must be positive");
    }
    let hidden = (c / norm.r).max(1);
    let width = match norm.g {
        GroupWidth::Oup => hidden,
        GroupWidth::PerGroup(0) => return config_err("g must be positive"),
        GroupWidth::PerGroup(g) => g.min(hidden),
    };
    let fc1 = c * hidden;
    let fc2 = width * 2 * c;
    Ok(match norm.kind {
        NormKind::None => (0, 0),
        NormKind::Bn => (2 * c, 0),
        NormKind::SeBn => (2 * fc1 + hidden + c + 2 * c, 2 * fc1),
        NormKind::Dn(DnVariant::B) => (fc1 + fc2 + 2 * c, fc1 + fc2),
        NormKind::Dn(DnVariant::CA) => (2 * fc1 + fc2 + 2 * c, 2 * fc1 + fc2),
        NormKind::Dn(DnVariant::CB) => (2 * fc1 + 2 * fc2 + 2 * c, 2 * fc1 + 2 * fc2),
    })
}

/// Cost report for MobileNetV2 where the BatchNorm layers selected by
/// `policy` use `norm` instead.
pub fn mobilenetv2_cost_table(norm: &NormSpec, policy: Policy) -> Result<CostReport> {
    let mut per_layer = Vec::new();
    for conv in convs() {
        let per_pixel = conv.cout * (conv.cin / conv.groups) * conv.kernel * conv.kernel;
        per_layer.push(LayerCost {
            name: conv.name.clone(),
            kind: "conv".into(),
            params: per_pixel,
            mult_adds: per_pixel * conv.out_size * conv.out_size,
        });
        let replaced = match policy {
            Policy::AllBn => true,
            Policy::ExpandOnly => conv.role == Role::Expand,
            Policy::ProjectOnly => conv.role == Role::Project,
        };
        let slot = if replaced { *norm } else { NormSpec::bn() };
        let (params, mult_adds) = formula_norm_cost(&slot, conv.cout)?;
        per_layer.push(LayerCost {
            name: format!("{}/norm", conv.name),
            kind: slot.kind.to_string(),
            params,
            mult_adds,
        });
    }
    per_layer.push(LayerCost {
        name: "classifier".into(),
        kind: "classifier".into(),
        params: LAST_CHANNELS * CLASSES + CLASSES,
        mult_adds: LAST_CHANNELS * CLASSES,
    });
    Ok(CostReport::from_layers(per_layer))
}

/// Published MobileNetV2 totals for a norm configuration, as printed in the
/// original tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PublishedFigures {
    pub params: &'static str,
    pub mult_adds: &'static str,
}

pub fn published_mnv2_figures(norm: &NormSpec) -> Option<PublishedFigures> {
    use GroupWidth::{Oup, PerGroup};
    let fig = |params, mult_adds| Some(PublishedFigures { params, mult_adds });
    match (norm.kind, norm.r, norm.g) {
        (NormKind::Bn, _, _) => fig("2.35M", "299.62M"),
        (NormKind::SeBn, 16, _) => fig("3.73M", "300.98M"),
        (NormKind::Dn(DnVariant::B), 16, PerGroup(1)) => fig("3.03M", "300.34M"),
        (NormKind::Dn(DnVariant::B), 16, PerGroup(2)) => fig("3.07M", "300.37M"),
        (NormKind::Dn(DnVariant::B), 16, PerGroup(4)) => fig("3.14M", "300.44M"),
        (NormKind::Dn(DnVariant::B), 16, Oup) => fig("4.36M", "301.66M"),
        (NormKind::Dn(DnVariant::B), 8, PerGroup(1)) => fig("3.72M", "301.02M"),
        (NormKind::Dn(DnVariant::B), 32, PerGroup(1)) => fig("2.69M", "300.00M"),
        (NormKind::Dn(DnVariant::CA), 16, PerGroup(1)) => fig("3.03M", "301.02M"),
        (NormKind::Dn(DnVariant::CB), 16, PerGroup(1)) => fig("3.03M", "301.05M"),
        _ => None,
    }
}
