use super::Dataset;
use crate::error::{config_err, Result};
use crate::tensor::{derive_seed, Rng, Tensor};
use serde::{Deserialize, Serialize};

/// Padding of the random-crop augmentation, in pixels.
const CROP_PAD: usize = 4;

/// Batching policy. The sample order of epoch `e` is a permutation drawn
/// from `(seed, e)`; augmentation of sample `i` in epoch `e` draws from
/// `(seed, e, i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batcher {
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub drop_last: bool,
    /// Zero-pad by 4, random crop back to size, random horizontal flip.
    pub augment: bool,
}

impl Batcher {
    /// Unshuffled, unaugmented batches keeping the last partial batch.
    pub fn sequential(batch_size: usize) -> Self {
        Batcher {
            batch_size,
            seed: 0,
            shuffle: false,
            drop_last: false,
            augment: false,
        }
    }

    /// Number of batches per epoch over `n` samples.
    pub fn batch_count(&self, n: usize) -> usize {
        if self.drop_last {
            n / self.batch_size
        } else {
            n.div_ceil(self.batch_size)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    /// Dataset indices of the samples.
    pub indices: Vec<usize>,
}

/// Iterator over one epoch's batches.
pub struct Batches<'a> {
    ds: &'a Dataset,
    b: Batcher,
    epoch: u64,
    order: Vec<usize>,
    next: usize,
}

/// One epoch of batches over `ds`.
pub fn batches<'a>(ds: &'a Dataset, b: &Batcher, epoch: u64) -> Result<Batches<'a>> {
    if b.batch_size == 0 || b.batch_size > ds.len() {
        return config_err(format!("batch size {} for {} samples", b.batch_size, ds.len()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if b.shuffle {
        Rng::new(derive_seed(&[b.seed, epoch])).shuffle(&mut order);
    }
    Ok(Batches {
        ds,
        b: *b,
        epoch,
        order,
        next: 0,
    })
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Result<Batch>> {
        let remaining = self.order.len() - self.next;
        if remaining == 0 || (self.b.drop_last && remaining < self.b.batch_size) {
            return None;
        }
        let take = remaining.min(self.b.batch_size);
        let indices = self.order[self.next..self.next + take].to_vec();
        self.next += take;
        Some(self.assemble(indices))
    }
}

impl Batches<'_> {
    fn assemble(&self, indices: Vec<usize>) -> Result<Batch> {
        let (mut images, labels) = self.ds.gather(&indices)?;
        if self.b.augment {
            images = augment(&images, &indices, self.b.seed, self.epoch)?;
        }
        Ok(Batch {
            images,
            labels,
            indices,
        })
    }
}

/// Pad-and-crop plus horizontal flip, one random stream per sample.
fn augment(images: &Tensor, indices: &[usize], seed: u64, epoch: u64) -> Result<Tensor> {
    let d = images.dims();
    let (c, h, w) = (d[1], d[2], d[3]);
    let per = c * h * w;
    let mut out = vec![0.0; images.numel()];
    for (n, &idx) in indices.iter().enumerate() {
        let mut rng = Rng::new(derive_seed(&[seed, epoch, idx as u64]));
        let dy = rng.below(2 * CROP_PAD + 1) as isize - CROP_PAD as isize;
        let dx = rng.below(2 * CROP_PAD + 1) as isize - CROP_PAD as isize;
        let flip = rng.coin();
        let src = &images.data()[n * per..(n + 1) * per];
        let dst = &mut out[n * per..(n + 1) * per];
        for ch in 0..c {
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let xx = if flip { w - 1 - x } else { x };
                    let sx = xx as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    dst[(ch * h + y) * w + x] = src[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    Tensor::from_vec(d, out)
}
