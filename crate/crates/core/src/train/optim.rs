use crate::error::{shape_err, Result};
use crate::tensor::Tensor;
use crate::zoo::Param;

/// Momentum buffers, one per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub velocity: Vec<Tensor>,
}

impl OptState {
    pub fn new(params: &[Param]) -> Self {
        OptState {
            velocity: params.iter().map(|p| p.value.zeros_like()).collect(),
        }
    }
}

/// `v ← momentum·v + grad + wd·param`, `param ← param − lr·v`. Parameters
/// with `decay == false` skip the `wd·param` term.
pub fn sgd_step(
    params: &mut [Param],
    grads: &[Tensor],
    opt: &mut OptState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || opt.velocity.len() != params.len() {
        return shape_err(format!(
            "{} params, {} grads, {} velocity buffers",
            params.len(),
            grads.len(),
            opt.velocity.len()
        ));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&opt.velocity) {
        if g.shape() != p.value.shape() || v.shape() != p.value.shape() {
            return shape_err(format!("{}: grad {} for param {}", p.name, g.shape(), p.value.shape()));
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(opt.velocity.iter_mut()) {
        let wd = if p.decay { weight_decay } else { 0.0 };
        let nv: Vec<f64> = v
            .data()
            .iter()
            .zip(g.data())
            .zip(p.value.data())
            .map(|((&v, &g), &w)| momentum * v + g + wd * w)
            .collect();
        let np: Vec<f64> = p.value.data().iter().zip(&nv).map(|(&w, &v)| w - lr * v).collect();
        *v = Tensor::from_vec(v.dims(), nv)?;
        p.value = Tensor::from_vec(p.value.dims(), np)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: &[f64], decay: bool) -> Param {
        Param {
            name: "p".into(),
            value: Tensor::from_vec(&[v.len()], v.to_vec()).unwrap(),
            decay,
        }
    }

    #[test]
    fn plain_sgd() {
        let mut p = vec![param(&[1.0, 2.0], true)];
        let mut opt = OptState::new(&p);
        let g = vec![Tensor::from_vec(&[2], vec![0.5, -1.0]).unwrap()];
        sgd_step(&mut p, &g, &mut opt, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p[0].value.data(), &[1.0 - 0.05, 2.0 + 0.1]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![param(&[1.0, -3.0], true)];
        let before = p.clone();
        let mut opt = OptState::new(&p);
        sgd_step(&mut p, &[Tensor::zeros(&[2]).unwrap()], &mut opt, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_matches_hand_recurrence() {
        // f(w) = w²/2, grad = w.
        let (lr, m, wd) = (0.1, 0.9, 0.01);
        let mut p = vec![param(&[2.0], true)];
        let mut opt = OptState::new(&p);
        for _ in 0..2 {
            let g = vec![p[0].value.clone()];
            sgd_step(&mut p, &g, &mut opt, lr, m, wd).unwrap();
        }
        let (mut w, mut v) = (2.0f64, 0.0f64);
        for _ in 0..2 {
            v = m * v + w + wd * w;
            w -= lr * v;
        }
        assert!((p[0].value.data()[0] - w).abs() < 1e-12);
    }

    #[test]
    fn decay_flag_and_shape_checks() {
        let mut p = vec![param(&[1.0], false)];
        let mut opt = OptState::new(&p);
        sgd_step(&mut p, &[Tensor::zeros(&[1]).unwrap()], &mut opt, 0.1, 0.0, 0.5).unwrap();
        assert_eq!(p[0].value.data(), &[1.0]);
        assert!(sgd_step(&mut p, &[Tensor::zeros(&[2]).unwrap()], &mut opt, 0.1, 0.0, 0.0).is_err());
        assert!(sgd_step(&mut p, &[], &mut opt, 0.1, 0.0, 0.0).is_err());
    }
}
