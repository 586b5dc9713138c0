use crate::autodiff::Eager;
use crate::data::{batches, Batcher, Dataset};
use crate::error::{config_err, Error, Result};
use crate::norm::Mode;
use crate::tensor::{concat_rows, write_named, Tensor};
use crate::zoo::Network;
use std::fmt::Write as _;

/// CSV header of [`AffineDump::to_csv`].
pub const CSV_HEADER: &str = "layer,class,channel,alpha_mean,lambda_mean";

/// Evaluation-mode `(α, λ)` of one DN layer for every dumped sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerAffine {
    pub layer: String,
    /// `(N, C)`; batch-shared coefficients are repeated per sample.
    pub alpha: Tensor,
    pub lambda: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineRow {
    pub layer: String,
    pub class: usize,
    pub channel: usize,
    pub alpha_mean: f64,
    pub lambda_mean: f64,
}

/// `(α, λ)` of the first and last DN layers plus their per-class channel
/// means.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineDump {
    pub labels: Vec<usize>,
    pub layers: Vec<LayerAffine>,
    /// Ordered by layer, then class, then channel.
    pub rows: Vec<AffineRow>,
}

/// Repeats a `(C)` tensor to `(n, C)`; `(n, C)` passes through.
fn per_sample(t: &Tensor, n: usize) -> Result<Tensor> {
    match t.dims() {
        [_, _] => Ok(t.clone()),
        [c] => Tensor::from_vec(&[n, *c], t.data().repeat(n)),
        _ => config_err(format!("unexpected affine shape {}", t.shape())),
    }
}

/// Runs `ds` through `net` in evaluation mode and summarizes the affine
/// coefficients of the first and last DN layers (a single DN layer is
/// dumped once). `classes` restricts the per-class means; `None` uses every
/// class present in `ds`, ascending.
pub fn dump_affine(net: &mut Network, ds: &Dataset, classes: Option<&[usize]>, batch_size: usize) -> Result<AffineDump> {
    let dn = net.dn_layers();
    let (Some(first), Some(last)) = (dn.first(), dn.last()) else {
        return config_err("model has no DN layers");
    };
    let selected: Vec<String> = if first == last {
        vec![first.to_string()]
    } else {
        vec![first.to_string(), last.to_string()]
    };

    let b = Batcher::sequential(batch_size.clamp(1, ds.len().max(1)));
    let mut alphas: Vec<Vec<Tensor>> = vec![Vec::new(); selected.len()];
    let mut lambdas: Vec<Vec<Tensor>> = vec![Vec::new(); selected.len()];
    for batch in batches(ds, &b, 0)? {
        let batch = batch?;
        let n = batch.labels.len();
        let p = net.leaves(&mut Eager);
        let out = net.forward(&mut Eager, &p, &batch.images, Mode::Eval)?;
        for a in out.affine {
            if let Some(k) = selected.iter().position(|s| *s == a.layer) {
                alphas[k].push(per_sample(&a.alpha, n)?);
                lambdas[k].push(per_sample(&a.lambda, n)?);
            }
        }
    }
    let layers = selected
        .into_iter()
        .zip(alphas.iter().zip(&lambdas))
        .map(|(layer, (a, l))| {
            Ok(LayerAffine {
                layer,
                alpha: concat_rows(a)?,
                lambda: concat_rows(l)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let classes: Vec<usize> = match classes {
        Some(c) => c.to_vec(),
        None => {
            let mut c = ds.labels.clone();
            c.sort_unstable();
            c.dedup();
            c
        }
    };
    let mut rows = Vec::new();
    for la in &layers {
        let c = la.alpha.dims()[1];
        for &class in &classes {
            let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
            if members.is_empty() {
                return Err(Error::Data(format!("no samples of class {class}")));
            }
            for ch in 0..c {
                let mean = |t: &Tensor| members.iter().map(|&i| t.data()[i * c + ch]).sum::<f64>() / members.len() as f64;
                rows.push(AffineRow {
                    layer: la.layer.clone(),
                    class,
                    channel: ch,
                    alpha_mean: mean(&la.alpha),
                    lambda_mean: mean(&la.lambda),
                });
            }
        }
    }
    Ok(AffineDump {
        labels: ds.labels.clone(),
        layers,
        rows,
    })
}

impl AffineDump {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.layer, r.class, r.channel, r.alpha_mean, r.lambda_mean);
        }
        out
    }

    /// Named-tensor dump of the per-sample coefficients
    /// (`<layer>/alpha`, `<layer>/lambda`); shapes are in each header.
    pub fn tensors(&self) -> String {
        let mut items = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            items.push((format!("{}/alpha", l.layer), &l.alpha));
            items.push((format!("{}/lambda", l.layer), &l.lambda));
        }
        write_named(items.iter().map(|(n, t)| (n.as_str(), *t)))
    }

    /// The `alpha_mean` curve over channels of one `(layer, class)`.
    pub fn alpha_curve(&self, layer: &str, class: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.layer == layer && r.class == class)
            .map(|r| r.alpha_mean)
            .collect()
    }
}

/// Pearson correlation of two equal-length series; `None` when either is
/// constant or the lengths differ.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use crate::norm::{DnVariant, GroupWidth};
    use crate::zoo::{build_toycnn, NormKind, NormSpec};

    fn net(kind: NormKind) -> Network {
        let spec = build_toycnn(NormSpec::new(kind, 2, GroupWidth::PerGroup(1)), 0.5, 4, [3, 8, 8]).unwrap();
        Network::new(&spec, 0).unwrap()
    }

    #[test]
    fn identity_model_dumps_ones_and_zeros() {
        let ds = synth_dataset(0, 16, 4, 8).unwrap();
        for v in [DnVariant::B, DnVariant::CA, DnVariant::CB] {
            let mut n = net(NormKind::Dn(v));
            let d = dump_affine(&mut n, &ds, Some(&[0, 2]), 5).unwrap();
            let widths: usize = d.layers.iter().map(|l| l.alpha.dims()[1]).sum();
            assert_eq!(d.rows.len(), 2 * widths);
            assert!(d.rows.iter().all(|r| r.alpha_mean == 1.0 && r.lambda_mean == 0.0));
            assert_eq!(d.layers[0].alpha.dims()[0], 16);
            let csv = d.to_csv();
            assert!(csv.starts_with(CSV_HEADER));
            assert_eq!(csv.lines().count(), d.rows.len() + 1);
        }
    }

    #[test]
    fn requires_dn_layers_and_present_classes() {
        let ds = synth_dataset(0, 8, 4, 8).unwrap();
        assert!(dump_affine(&mut net(NormKind::Bn), &ds, None, 4).is_err());
        assert!(dump_affine(&mut net(NormKind::Dn(DnVariant::B)), &ds, Some(&[7]), 4).is_err());
    }

    #[test]
    fn pearson_cases() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.5]).unwrap() - 0.99795).abs() < 1e-4);
        assert_eq!(pearson(&[1.0, 2.0], &[2.0, 1.0]), Some(-1.0));
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 1.0]), None);
    }
}
