use crate::error::Result;
use serde_json::{json, Map, Value};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Metrics of one epoch (0-based). Accuracies are percentages.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub epochs: Vec<EpochMetrics>,
    /// `None` when training halted on a non-finite value.
    pub test_acc: Option<f64>,
    pub nan_onset_epoch: Option<usize>,
}

/// Non-finite floats become `null`.
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

impl EpochMetrics {
    /// One JSON object with sorted keys.
    pub fn to_json_line(&self) -> String {
        json!({
            "epoch": self.epoch,
            "lr": num(self.lr),
            "train_loss": num(self.train_loss),
            "train_acc": num(self.train_acc),
            "val_acc": num(self.val_acc),
        })
        .to_string()
    }
}

impl MetricsRecord {
    /// The closing line: `test_acc` and, after a halt, `nan_onset_epoch`.
    pub fn final_line(&self) -> String {
        let mut m = Map::new();
        m.insert("test_acc".into(), self.test_acc.map_or(Value::Null, num));
        if let Some(e) = self.nan_onset_epoch {
            m.insert("nan_onset_epoch".into(), json!(e));
        }
        Value::Object(m).to_string()
    }

    /// The whole record as JSON lines: one per epoch plus the final line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&e.to_json_line());
            out.push('\n');
        }
        out.push_str(&self.final_line());
        out.push('\n');
        out
    }
}

/// Appends metrics lines to a file as they are produced.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

impl MetricsWriter {
    /// Creates (truncating) the file.
    pub fn create(path: &Path) -> Result<Self> {
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            file: File::create(path)?,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn epoch(&mut self, e: &EpochMetrics) -> Result<()> {
        writeln!(self.file, "{}", e.to_json_line())?;
        self.file.flush()?;
        Ok(())
    }

    pub fn finish(&mut self, record: &MetricsRecord) -> Result<()> {
        writeln!(self.file, "{}", record.final_line())?;
        self.file.flush()?;
        Ok(())
    }
}
