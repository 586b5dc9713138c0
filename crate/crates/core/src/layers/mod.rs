//! Non-normalization building blocks.
//!
//! Each layer has a plain tensor kernel here; the autodiff graph in
//! [`crate::autodiff`] calls the same kernels for its forward values and uses
//! the `*_backward` kernels for gradients.

mod conv;
mod fc;

pub use conv::{conv2d, conv2d_backward, conv2d_forward, conv_out_size, ConvParams};
pub use fc::{fc_param_count, grouped_fc, grouped_fc_backward, grouped_fc_forward, FcParams};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(kind: Activation, x: &Tensor) -> Tensor {
    match kind {
        Activation::Relu => x.map(|v| if v > 0.0 || v.is_nan() { v } else { 0.0 }),
        Activation::Sigmoid => x.map(sigmoid_scalar),
    }
}

/// Per-sample, per-channel spatial mean: `(N,C,H,W) -> (N,C)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let d = x.dims();
    if d.len() != 4 {
        return shape_err(format!("global_avg_pool expects NCHW, got {}", x.shape()));
    }
    let hw = d[2] * d[3];
    let data = x
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect();
    Tensor::from_vec(&[d[0], d[1]], data)
}

pub(crate) fn global_avg_pool_backward(g: &Tensor, input: &Shape) -> Tensor {
    let d = input.dims();
    let hw = d[2] * d[3];
    let scale = 1.0 / hw as f64;
    let mut data = Vec::with_capacity(input.numel());
    for &v in g.data() {
        data.extend(std::iter::repeat_n(v * scale, hw));
    }
    Tensor::from_shape(input.clone(), data)
}

fn check_logits(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let d = logits.dims();
    if d.len() != 2 {
        return shape_err(format!("logits must be (N,K), got {}", logits.shape()));
    }
    let (n, k) = (d[0], d[1]);
    if labels.len() != n {
        return shape_err(format!("{} labels for {n} rows of logits", labels.len()));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Data(format!("label {l} at index {i} is outside 0..{k}")));
    }
    Ok((n, k))
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let d = logits.dims();
    if d.len() != 2 {
        return shape_err(format!("softmax expects (N,K), got {}", logits.shape()));
    }
    let k = d[1];
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - m).exp()));
        let z: f64 = out[start..].iter().sum();
        for v in &mut out[start..] {
            *v /= z;
        }
    }
    Tensor::from_vec(d, out)
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, k) = check_logits(logits, labels)?;
    let mut total = 0.0;
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / n as f64)
}

/// Gradient of [`softmax_cross_entropy`] scaled by the upstream scalar `g`.
pub(crate) fn softmax_cross_entropy_backward(logits: &Tensor, labels: &[usize], g: f64) -> Result<Tensor> {
    let (n, k) = check_logits(logits, labels)?;
    let p = softmax(logits)?;
    let mut data = p.into_data();
    let scale = g / n as f64;
    for (i, &label) in labels.iter().enumerate() {
        data[i * k + label] -= 1.0;
    }
    for v in &mut data {
        *v *= scale;
    }
    Tensor::from_vec(logits.dims(), data)
}

/// Index of the largest logit per row; ties and NaN rows resolve to the
/// lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.dims().last().copied().unwrap_or(1);
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Fill, Rng};

    #[test]
    fn relu_and_sigmoid() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(activation(Activation::Relu, &x).data(), &[0.0, 0.0, 2.0]);
        let s = activation(Activation::Sigmoid, &Tensor::from_vec(&[3], vec![0.0, 20.0, -20.0]).unwrap());
        assert_eq!(s.data()[0], 0.5);
        assert!((s.data()[1] - 1.0).abs() < 1e-8);
        assert!(s.data()[2].abs() < 1e-8);
    }

    #[test]
    fn pooling() {
        let c = Tensor::full(&[1, 1, 2, 2], 3.0).unwrap();
        assert_eq!(global_avg_pool(&c).unwrap().data(), &[3.0]);
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);

        let r = Tensor::create(Fill::Normal { mean: 0.0, std: 1.0 }, &[3, 4, 5, 2], &mut Rng::new(1)).unwrap();
        let got = global_avg_pool(&r).unwrap();
        for n in 0..3 {
            for c in 0..4 {
                let mut s = 0.0;
                for h in 0..5 {
                    for w in 0..2 {
                        s += r.get(&[n, c, h, w]);
                    }
                }
                assert!((got.get(&[n, c]) - s / 10.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = Tensor::full(&[2, 4], 0.7).unwrap();
        let loss = softmax_cross_entropy(&uniform, &[0, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);

        let mut sat = vec![0.0; 4];
        sat[2] = 1000.0;
        let sat = Tensor::from_vec(&[1, 4], sat).unwrap();
        assert!(softmax_cross_entropy(&sat, &[2]).unwrap() < 1e-300);
        assert!(softmax_cross_entropy(&sat, &[4]).is_err());

        let logits = Tensor::create(Fill::Normal { mean: 0.0, std: 2.0 }, &[8, 10], &mut Rng::new(3)).unwrap();
        let labels: Vec<usize> = (0..8).map(|i| (i * 7) % 10).collect();
        let mut direct = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let z: f64 = (0..10).map(|j| logits.get(&[i, j]).exp()).sum();
            direct += -(logits.get(&[i, l]).exp() / z).ln();
        }
        direct /= 8.0;
        let got = softmax_cross_entropy(&logits, &labels).unwrap();
        assert!((got - direct).abs() < 1e-10);
        assert!(got >= 0.0);
    }

    #[test]
    fn argmax_picks_first_on_ties() {
        let t = Tensor::from_vec(&[2, 3], vec![1.0, 5.0, 5.0, f64::NAN, 0.0, 0.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }
}
