//! Datasets: CIFAR-10 binary loader, synthetic blobs and a deterministic
//! batcher with pad-and-crop / flip augmentation.

mod batch;
mod cifar;
mod synth;

pub use batch::{batches, Batch, Batcher, Batches};
pub use cifar::{load_cifar10, read_cifar10_file, Split, CIFAR10_CLASSES, RECORD_BYTES};
pub use synth::{synth_dataset, synth_dataset_with};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{narrow, reduce, ReduceOp, Tensor};
use serde::{Deserialize, Serialize};

/// Per-channel constants applied as `(x − mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Population mean and standard deviation per channel of `(N, C, H, W)`
    /// images. A zero deviation is replaced by one.
    pub fn compute(images: &Tensor) -> Result<Self> {
        if images.dims().len() != 4 {
            return shape_err(format!("expected (N,C,H,W) images, got {}", images.shape()));
        }
        let mean = reduce(ReduceOp::Mean, images, &[0, 2, 3])?.into_data();
        let std = reduce(ReduceOp::Var, images, &[0, 2, 3])?
            .into_data()
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Standardization { mean, std })
    }

    pub fn apply(&self, images: &Tensor) -> Result<Tensor> {
        let d = images.dims();
        if d.len() != 4 || d[1] != self.mean.len() {
            return shape_err(format!("{} channels of constants for images {}", self.mean.len(), images.shape()));
        }
        let plane = d[2] * d[3];
        let c = d[1];
        let data = images
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / plane) % c;
                (v - self.mean[ch]) / self.std[ch]
            })
            .collect();
        Tensor::from_vec(d, data)
    }
}

/// Standardized images with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub standardization: Standardization,
}

impl Dataset {
    /// Standardizes raw `images` with `constants`, or with constants
    /// computed from the images themselves when `None`.
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, constants: Option<Standardization>) -> Result<Self> {
        let d = images.dims();
        if d.len() != 4 || d[0] != labels.len() {
            return shape_err(format!("{} labels for images {}", labels.len(), images.shape()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} outside [0, {classes})")));
        }
        let standardization = match constants {
            Some(s) => s,
            None => Standardization::compute(&images)?,
        };
        let images = standardization.apply(&images)?;
        Ok(Dataset {
            images,
            labels,
            classes,
            standardization,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let d = self.images.dims();
        [d[1], d[2], d[3]]
    }

    /// The first `n` samples (all of them if `n ≥ len`).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        Ok(Dataset {
            images: narrow(&self.images, 0, 0, n)?,
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            standardization: self.standardization.clone(),
        })
    }

    /// Samples `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Dataset> {
        if len == 0 || start + len > self.len() {
            return Err(Error::Data(format!("slice {start}..{} of {} samples", start + len, self.len())));
        }
        Ok(Dataset {
            images: narrow(&self.images, 0, start, len)?,
            labels: self.labels[start..start + len].to_vec(),
            classes: self.classes,
            standardization: self.standardization.clone(),
        })
    }

    /// Samples `indices`, in order, stacked into `(images, labels)`.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let [c, h, w] = self.image_shape();
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!("sample {i} out of range for {} samples", self.len())));
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        Ok((Tensor::from_vec(&[indices.len(), c, h, w], data)?, labels))
    }
}
