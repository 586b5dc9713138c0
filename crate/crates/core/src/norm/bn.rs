use super::{normalize, Mode, RunningStats};
use crate::autodiff::{Eager, Ops};
use crate::error::Result;
use crate::tensor::Tensor;

/// BatchNorm: learnable `gamma`/`beta` plus running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: RunningStats,
}

impl BnState {
    /// `gamma = 1`, `beta = 0`, running mean 0 and variance 1.
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BnState {
            gamma: Tensor::ones(&[channels])?,
            beta: Tensor::zeros(&[channels])?,
            stats: RunningStats::new(channels)?,
        })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (gamma, beta) = (self.gamma.clone(), self.beta.clone());
        bn_forward(&mut Eager, x, &gamma, &beta, &mut self.stats, mode)
    }
}

/// `normalize(X) * gamma + beta`.
pub fn bn_forward<G: Ops>(
    g: &mut G,
    x: &G::V,
    gamma: &G::V,
    beta: &G::V,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<G::V> {
    let n = normalize(g, x, stats, mode)?;
    let scaled = g.mul(&n.out, gamma)?;
    g.add(&scaled, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::norm::batch_stats;
    use crate::tensor::{concat_rows, narrow, Fill, Rng};

    fn randn(dims: &[usize], seed: u64) -> Tensor {
        Tensor::create(Fill::Normal { mean: 0.5, std: 1.5 }, dims, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn two_sample_hand_case() {
        let mut bn = BnState::new(1).unwrap();
        let x = Tensor::from_vec(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-15);
        assert!((y.data()[1] - expect).abs() < 1e-15);
        assert!((expect - 0.999995).abs() < 1e-8);
    }

    #[test]
    fn affine_on_standardized_input() {
        // Each channel already has zero mean and unit variance.
        let x = Tensor::from_vec(&[2, 1, 1, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let mut bn = BnState::new(1).unwrap();
        bn.stats.eps = 0.0;
        bn.gamma = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        bn.beta = Tensor::from_vec(&[1], vec![5.0]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        let want = x.map(|v| 2.0 * v + 5.0);
        assert_eq!(y, want);
    }

    #[test]
    fn train_output_is_standardized() {
        let x = randn(&[6, 3, 2, 2], 4);
        let mut bn = BnState::new(3).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        let (_, var) = batch_stats(&x).unwrap();
        let (m2, v2) = batch_stats(&y).unwrap();
        for c in 0..3 {
            let v = var.data()[c];
            assert!(m2.data()[c].abs() < 1e-10);
            assert!((v2.data()[c] - v / (v + 1e-5)).abs() < 1e-10);
        }
    }

    #[test]
    fn eval_rows_do_not_depend_on_batch_composition() {
        let mut bn = BnState::new(3).unwrap();
        for s in 0..5 {
            bn.forward(&randn(&[4, 3, 2, 2], s), Mode::Train).unwrap();
        }
        let a = randn(&[4, 3, 2, 2], 10);
        let extra = randn(&[3, 3, 2, 2], 11);
        let full = bn.forward(&a, Mode::Eval).unwrap();
        let mixed = concat_rows(&[extra.clone(), narrow(&a, 0, 2, 1).unwrap(), extra]).unwrap();
        let out = bn.forward(&mixed, Mode::Eval).unwrap();
        let row = narrow(&out, 0, 3, 1).unwrap();
        assert_eq!(row, narrow(&full, 0, 2, 1).unwrap());
    }

    #[test]
    fn recorded_equals_eager_bitwise() {
        let x = randn(&[4, 2, 3, 3], 7);
        let mut eager = BnState::new(2).unwrap();
        eager.gamma = randn(&[2], 8);
        eager.beta = randn(&[2], 9);
        let mut recorded = eager.clone();
        let want = eager.forward(&x, Mode::Train).unwrap();

        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let gv = tape.leaf(recorded.gamma.clone());
        let bv = tape.leaf(recorded.beta.clone());
        let y = bn_forward(&mut tape, &xv, &gv, &bv, &mut recorded.stats, Mode::Train).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(tape.value(&y)), bits(&want));
        assert_eq!(recorded.stats, eager.stats);
    }

    #[test]
    fn zero_variance_is_finite() {
        let x = Tensor::full(&[3, 2, 2, 2], 4.0).unwrap();
        let y = BnState::new(2).unwrap().forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
