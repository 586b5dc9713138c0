use super::{Dataset, Standardization};
use crate::error::{config_err, Result};
use crate::tensor::{derive_seed, Rng, Tensor};
use std::f64::consts::PI;

/// Jitter of the blob centre in pixels.
const CENTER_JITTER: f64 = 0.5;
/// Standard deviation of the per-pixel noise.
const PIXEL_NOISE: f64 = 0.1;

/// Three-channel images of one Gaussian blob on a dark background. Class
/// `k` places the blob at angle `2πk/K` on a ring around the centre and
/// alternates between a narrow and a wide blob; each channel sees the blob
/// at a class-dependent gain. Sample `i` has label `i mod K`, so `n = K·m`
/// gives exactly `m` samples per class.
pub fn synth_dataset(seed: u64, n: usize, classes: usize, size: usize) -> Result<Dataset> {
    synth_dataset_with(seed, n, classes, size, None)
}

/// [`synth_dataset`] standardized with given constants, e.g. those of a
/// training split.
pub fn synth_dataset_with(
    seed: u64,
    n: usize,
    classes: usize,
    size: usize,
    constants: Option<Standardization>,
) -> Result<Dataset> {
    if n == 0 || classes == 0 || size < 4 {
        return config_err(format!("synthetic data needs n ≥ 1, classes ≥ 1 and size ≥ 4 (got {n}, {classes}, {size})"));
    }
    let s = size as f64;
    let mid = (s - 1.0) / 2.0;
    let ring = s / 4.0;
    let plane = size * size;
    let mut data = Vec::with_capacity(n * 3 * plane);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        let mut rng = Rng::new(derive_seed(&[seed, i as u64]));
        let angle = 2.0 * PI * k as f64 / classes as f64;
        let cy = mid + ring * angle.sin() + CENTER_JITTER * rng.standard_normal();
        let cx = mid + ring * angle.cos() + CENTER_JITTER * rng.standard_normal();
        let sigma = s / 10.0 * if k % 2 == 0 { 1.0 } else { 1.6 };
        for ch in 0..3 {
            let gain = 0.6 + 0.4 * ((k + ch) % 3) as f64 / 2.0;
            for y in 0..size {
                for x in 0..size {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let v = gain * (-d2 / (2.0 * sigma * sigma)).exp() + PIXEL_NOISE * rng.standard_normal();
                    data.push(v);
                }
            }
        }
        labels.push(k);
    }
    let images = Tensor::from_vec(&[n, 3, size, size], data)?;
    Dataset::new(images, labels, classes, constants)
}
