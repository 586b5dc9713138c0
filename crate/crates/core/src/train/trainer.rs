use super::{sgd_step, EpochMetrics, MetricsRecord, MetricsWriter, OptState, TrainConfig};
use crate::autodiff::{Ops, Tape};
use crate::data::{batches, Batcher, Dataset};
use crate::error::{config_err, Error, Result};
use crate::layers::argmax_rows;
use crate::norm::Mode;
use crate::tensor::{concat_rows, Tensor};
use crate::zoo::Network;

/// Top-1 accuracy in percent.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = argmax_rows(logits).iter().zip(labels).filter(|(p, l)| p == l).count();
    100.0 * hits as f64 / labels.len() as f64
}

/// Evaluation-mode logits of every sample, in dataset order.
pub fn predict_logits(net: &mut Network, ds: &Dataset, batch_size: usize) -> Result<Tensor> {
    check_compatible(net, ds)?;
    let b = Batcher::sequential(batch_size.min(ds.len()));
    let mut parts = Vec::with_capacity(b.batch_count(ds.len()));
    for batch in batches(ds, &b, 0)? {
        parts.push(net.logits(&batch?.images, Mode::Eval)?);
    }
    concat_rows(&parts)
}

pub fn evaluate(net: &mut Network, ds: &Dataset, batch_size: usize) -> Result<f64> {
    let logits = predict_logits(net, ds, batch_size)?;
    Ok(accuracy(&logits, &ds.labels))
}

fn check_compatible(net: &Network, ds: &Dataset) -> Result<()> {
    let spec = net.spec();
    if ds.image_shape() != spec.input || ds.classes != spec.classes {
        return config_err(format!(
            "dataset has {:?} images and {} classes, model expects {:?} and {}",
            ds.image_shape(),
            ds.classes,
            spec.input,
            spec.classes
        ));
    }
    Ok(())
}

fn state_is_finite(net: &Network) -> bool {
    net.params.iter().all(|p| p.value.is_finite()) && net.stats.iter().all(|s| s.mean.is_finite() && s.var.is_finite())
}

/// Trains `net` in place. Validation accuracy is measured in evaluation
/// mode after every epoch and each epoch's line is written to `writer`
/// immediately. A non-finite loss or model state stops training at the
/// offending step; the record then carries `nan_onset_epoch` and no test
/// accuracy.
pub fn train(
    net: &mut Network,
    train_ds: &Dataset,
    val_ds: &Dataset,
    test_ds: &Dataset,
    cfg: &TrainConfig,
    mut writer: Option<&mut MetricsWriter>,
) -> Result<MetricsRecord> {
    cfg.validate()?;
    for ds in [train_ds, val_ds, test_ds] {
        check_compatible(net, ds)?;
    }
    if cfg.batch_size > train_ds.len() {
        return config_err(format!("batch size {} for {} training samples", cfg.batch_size, train_ds.len()));
    }
    let batcher = Batcher {
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        shuffle: true,
        drop_last: cfg.drop_last,
        augment: cfg.augment,
    };
    let mut opt = OptState::new(&net.params);
    let mut record = MetricsRecord::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0.0, 0usize);
        let mut halted = false;
        for batch in batches(train_ds, &batcher, epoch as u64)? {
            let batch = batch?;
            let mut tape = Tape::new();
            let p = net.leaves(&mut tape);
            let x = tape.leaf(batch.images);
            let out = net.forward(&mut tape, &p, &x, Mode::Train)?;
            let loss = tape.softmax_cross_entropy(&out.logits, &batch.labels)?;
            let loss_value = tape.value(&loss).item().unwrap_or(f64::NAN);
            let n = batch.labels.len();
            loss_sum += loss_value * n as f64;
            hits += accuracy(tape.value(&out.logits), &batch.labels) * n as f64 / 100.0;
            seen += n;
            if !loss_value.is_finite() {
                halted = true;
                break;
            }
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = p
                .iter()
                .map(|v| grads.get(*v).cloned().ok_or_else(|| Error::Autodiff("missing parameter gradient".into())))
                .collect::<Result<_>>()?;
            sgd_step(&mut net.params, &grads, &mut opt, lr, cfg.momentum, cfg.weight_decay)?;
            if !state_is_finite(net) {
                halted = true;
                break;
            }
        }
        let val_acc = if halted {
            f64::NAN
        } else {
            evaluate(net, val_ds, cfg.eval_batch_size)?
        };
        let metrics = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / seen.max(1) as f64,
            train_acc: 100.0 * hits / seen.max(1) as f64,
            val_acc,
        };
        if let Some(w) = writer.as_deref_mut() {
            w.epoch(&metrics)?;
        }
        record.epochs.push(metrics);
        if halted {
            record.nan_onset_epoch = Some(epoch);
            break;
        }
    }
    if record.nan_onset_epoch.is_none() {
        record.test_acc = Some(evaluate(net, test_ds, cfg.eval_batch_size)?);
    }
    if let Some(w) = writer {
        w.finish(&record)?;
    }
    Ok(record)
}
