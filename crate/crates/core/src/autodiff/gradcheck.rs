use super::{Ops, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// First flat index where either gradient is not finite.
    pub non_finite_at: Option<usize>,
    pub analytic: Tensor,
    pub numeric: Tensor,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.non_finite_at.is_none() && self.max_rel_error < tol
    }
}

/// Checks `f: x -> scalar` at `x` with step `h`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut reports = grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)?;
    Ok(reports.remove(0))
}

/// Checks the gradient of `f` with respect to every tensor in `inputs`; one
/// report per input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<Vec<GradCheckReport>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(&out)
            .item()
            .ok_or_else(|| Error::Autodiff("checked function must return a scalar".into()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut reports = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).expect("leaf gradient").clone();
        let mut numeric = Vec::with_capacity(input.numel());
        for j in 0..input.numel() {
            let mut plus = input.data().to_vec();
            let mut minus = plus.clone();
            plus[j] += h;
            minus[j] -= h;
            work[k] = Tensor::from_vec(input.dims(), plus)?;
            let fp = eval(&work)?;
            work[k] = Tensor::from_vec(input.dims(), minus)?;
            let fm = eval(&work)?;
            numeric.push((fp - fm) / (2.0 * h));
        }
        work[k] = input.clone();
        let numeric = Tensor::from_vec(input.dims(), numeric)?;

        let mut max_rel_error = 0.0f64;
        let mut worst_index = 0;
        let mut non_finite_at = None;
        for (j, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
            if !a.is_finite() || !n.is_finite() {
                non_finite_at.get_or_insert(j);
                continue;
            }
            let err = (a - n).abs() / 1f64.max(a.abs()).max(n.abs());
            if err > max_rel_error {
                max_rel_error = err;
                worst_index = j;
            }
        }
        if non_finite_at.is_some() {
            max_rel_error = f64::NAN;
        }
        reports.push(GradCheckReport {
            max_rel_error,
            worst_index,
            non_finite_at,
            analytic,
            numeric,
        });
    }
    Ok(reports)
}
