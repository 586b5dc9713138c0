use crate::autodiff::{grad_check_many, GradCheckReport, Ops, Tape, Var};
use crate::error::{config_err, Error, Result};
use crate::norm::{
    bn_forward, dn_forward, se_bn_forward, DnVariant, DnWeights, GroupWidth, Mode, RunningStats, ScConfig, SeParams,
};
use crate::tensor::{Fill, Rng, Tensor};
use std::fmt;
use std::str::FromStr;

/// Central-difference step used by every check.
pub const STEP: f64 = 1e-5;
/// Pass threshold of the `gradcheck` command.
pub const CLI_TOLERANCE: f64 = 1e-4;

/// Layers the gradient checker knows how to exercise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckLayer {
    Conv,
    Fc,
    GroupedFc,
    Bn,
    Se,
    Dn(DnVariant),
    Loss,
}

impl CheckLayer {
    pub const ALL: [CheckLayer; 9] = [
        CheckLayer::Conv,
        CheckLayer::Fc,
        CheckLayer::GroupedFc,
        CheckLayer::Bn,
        CheckLayer::Se,
        CheckLayer::Dn(DnVariant::B),
        CheckLayer::Dn(DnVariant::CA),
        CheckLayer::Dn(DnVariant::CB),
        CheckLayer::Loss,
    ];

    /// Whether the layer computes a variance and its square root.
    pub fn has_variance_path(self) -> bool {
        matches!(self, CheckLayer::Bn | CheckLayer::Se | CheckLayer::Dn(_))
    }

    /// Strictest error bound the layer is expected to meet: `1e-5` for
    /// layers without a variance path, `1e-4` otherwise.
    pub fn tolerance(self) -> f64 {
        if self.has_variance_path() {
            1e-4
        } else {
            1e-5
        }
    }
}

impl fmt::Display for CheckLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckLayer::Conv => f.write_str("conv"),
            CheckLayer::Fc => f.write_str("fc"),
            CheckLayer::GroupedFc => f.write_str("gfc"),
            CheckLayer::Bn => f.write_str("bn"),
            CheckLayer::Se => f.write_str("se"),
            CheckLayer::Dn(v) => write!(f, "{v}"),
            CheckLayer::Loss => f.write_str("loss"),
        }
    }
}

impl FromStr for CheckLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckLayer::ALL
            .into_iter()
            .find(|l| l.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown layer {s:?}; expected one of {}", names())))
    }
}

fn names() -> String {
    CheckLayer::ALL.map(|l| l.to_string()).join("|")
}

/// Maximum relative error of one gradient group.
#[derive(Clone, Debug)]
pub struct GroupResult {
    pub group: String,
    pub elements: usize,
    pub report: GradCheckReport,
}

impl GroupResult {
    pub fn max_rel_error(&self) -> f64 {
        self.report.max_rel_error
    }
}

fn randn(dims: &[usize], rng: &mut Rng) -> Result<Tensor> {
    Tensor::create(Fill::Normal { mean: 0.0, std: 1.0 }, dims, rng)
}

/// `Σ out ⊙ probe`: a scalar whose gradient reaches every output element
/// with a distinct weight.
fn probe_loss(tape: &mut Tape, out: &Var, probe: &Tensor) -> Result<Var> {
    let p = tape.leaf(probe.clone());
    let prod = tape.mul(out, &p)?;
    tape.sum_all(&prod)
}

fn run(
    groups: Vec<(String, Tensor)>,
    probe: Option<Tensor>,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<Vec<GroupResult>> {
    let (names, inputs): (Vec<String>, Vec<Tensor>) = groups.into_iter().unzip();
    if let Some((n, t)) = names.iter().zip(&inputs).find(|(_, t)| t.numel() > 64) {
        return config_err(format!("gradcheck tensor {n} has {} elements", t.numel()));
    }
    let reports = grad_check_many(
        |tape, vars| {
            let out = f(tape, vars)?;
            match &probe {
                Some(p) => probe_loss(tape, &out, p),
                None => Ok(out),
            }
        },
        &inputs,
        STEP,
    )?;
    Ok(names
        .into_iter()
        .zip(inputs)
        .zip(reports)
        .map(|((group, t), report)| GroupResult {
            group,
            elements: t.numel(),
            report,
        })
        .collect())
}

/// Runs a finite-difference check of `layer` on seeded random shapes and
/// values; one result per input or parameter group. Every tensor holds at
/// most 64 elements.
pub fn check_layer(layer: CheckLayer, seed: u64) -> Result<Vec<GroupResult>> {
    let mut rng = Rng::new(seed);
    match layer {
        CheckLayer::Conv => {
            let stride = 1 + rng.below(2);
            let x = randn(&[1, 2, 5, 5], &mut rng)?;
            let w = randn(&[3, 2, 3, 3], &mut rng)?;
            let b = randn(&[3], &mut rng)?;
            let side = (5 + 2 - 3) / stride + 1;
            let probe = randn(&[1, 3, side, side], &mut rng)?;
            let groups = vec![("x".into(), x), ("w".into(), w), ("b".into(), b)];
            run(groups, Some(probe), |t, v| t.conv2d(&v[0], &v[1], Some(&v[2]), stride, 1))
        }
        CheckLayer::Fc | CheckLayer::GroupedFc => {
            let (groups_n, inputs, outputs) = if layer == CheckLayer::Fc { (1, 6, 5) } else { (2, 8, 6) };
            let x = randn(&[4, inputs], &mut rng)?;
            let w = randn(&[outputs, inputs / groups_n], &mut rng)?;
            let b = randn(&[outputs], &mut rng)?;
            let probe = randn(&[4, outputs], &mut rng)?;
            let groups = vec![("x".into(), x), ("w".into(), w), ("b".into(), b)];
            run(groups, Some(probe), move |t, v| t.grouped_fc(&v[0], &v[1], Some(&v[2]), groups_n))
        }
        CheckLayer::Loss => {
            let logits = randn(&[6, 5], &mut rng)?.map(|v| 2.0 * v);
            let labels: Vec<usize> = (0..6).map(|_| rng.below(5)).collect();
            run(vec![("logits".into(), logits)], None, move |t, v| {
                t.softmax_cross_entropy(&v[0], &labels)
            })
        }
        CheckLayer::Bn => {
            let x = randn(&[3, 4, 2, 2], &mut rng)?;
            let gamma = randn(&[4], &mut rng)?;
            let beta = randn(&[4], &mut rng)?;
            let probe = randn(&[3, 4, 2, 2], &mut rng)?;
            let groups = vec![("x".into(), x), ("gamma".into(), gamma), ("beta".into(), beta)];
            run(groups, Some(probe), |t, v| {
                let mut stats = RunningStats::new(4)?;
                bn_forward(t, &v[0], &v[1], &v[2], &mut stats, Mode::Train)
            })
        }
        CheckLayer::Se => {
            let (c, r) = (4, 2);
            let x = randn(&[3, c, 2, 2], &mut rng)?;
            let shapes = SeParams::init(c, r, &mut rng)?;
            let mut groups: Vec<(String, Tensor)> = vec![("x".into(), x)];
            for (name, t) in [
                ("se_fc1_w", &shapes.fc1_w),
                ("se_fc1_b", &shapes.fc1_b),
                ("se_fc2_w", &shapes.fc2_w),
                ("se_fc2_b", &shapes.fc2_b),
            ] {
                groups.push((name.into(), randn(t.dims(), &mut rng)?));
            }
            groups.push(("gamma".into(), randn(&[c], &mut rng)?));
            groups.push(("beta".into(), randn(&[c], &mut rng)?));
            let probe = randn(&[3, c, 2, 2], &mut rng)?;
            run(groups, Some(probe), move |t, v| {
                let se = SeParams {
                    fc1_w: v[1],
                    fc1_b: v[2],
                    fc2_w: v[3],
                    fc2_b: v[4],
                };
                let mut stats = RunningStats::new(c)?;
                se_bn_forward(t, &v[0], &se, &v[5], &v[6], &mut stats, Mode::Train)
            })
        }
        CheckLayer::Dn(variant) => {
            let c = 4;
            let g = [GroupWidth::PerGroup(1), GroupWidth::PerGroup(2), GroupWidth::Oup][rng.below(3)];
            let geom = ScConfig::new(c, 2, g).geometry()?;
            let x = randn(&[3, c, 2, 2], &mut rng)?;
            let mut groups: Vec<(String, Tensor)> = vec![("x".into(), x)];
            for (name, dims) in variant.param_names().iter().zip(variant.param_shapes(&geom)) {
                groups.push((name.to_string(), randn(&dims, &mut rng)?));
            }
            let probe = randn(&[3, c, 2, 2], &mut rng)?;
            run(groups, Some(probe), move |t, v| {
                let w = DnWeights::from_parts(variant, v[1..].to_vec())?;
                let mut stats = RunningStats::new(c)?;
                Ok(dn_forward(t, &v[0], &geom, &w, &mut stats, Mode::Train)?.out)
            })
        }
    }
}
