use super::{Dataset, Standardization};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::{Path, PathBuf};

/// One label byte followed by 3×32×32 channel-major pixel bytes.
pub const RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const CIFAR10_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn files(self) -> Vec<String> {
        match self {
            Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            Split::Test => vec!["test_batch.bin".to_string()],
        }
    }
}

/// Parses one binary batch file into pixels scaled to `[0, 1]` (flat,
/// `(N, 3, 32, 32)` order) and labels.
pub fn read_cifar10_file(path: &Path) -> Result<(Vec<f64>, Vec<usize>)> {
    let bytes = std::fs::read(path)?;
    let load_err = |offset: usize, reason: String| Error::Load {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    if bytes.is_empty() {
        return Err(load_err(0, "file holds no records".into()));
    }
    let whole = bytes.len() / RECORD_BYTES * RECORD_BYTES;
    if whole != bytes.len() {
        return Err(load_err(
            whole,
            format!("truncated record: {} trailing bytes", bytes.len() - whole),
        ));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * (RECORD_BYTES - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR10_CLASSES {
            return Err(load_err(i * RECORD_BYTES, format!("label byte {label} > 9")));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok((pixels, labels))
}

/// Loads a split from a directory holding the standard `*.bin` batches
/// (either directly or in a `cifar-10-batches-bin` subdirectory).
/// `constants` should be the training split's standardization when loading
/// the test split; `None` computes them from the loaded images.
pub fn load_cifar10(dir: &Path, split: Split, constants: Option<Standardization>) -> Result<Dataset> {
    let nested = dir.join("cifar-10-batches-bin");
    let root: PathBuf = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in split.files() {
        let (p, l) = read_cifar10_file(&root.join(name))?;
        pixels.extend(p);
        labels.extend(l);
    }
    let images = Tensor::from_vec(&[labels.len(), 3, 32, 32], pixels)?;
    Dataset::new(images, labels, CIFAR10_CLASSES, constants)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_records(records: &[(u8, u8)]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for &(label, pixel) in records {
            f.write_all(&[label]).unwrap();
            f.write_all(&vec![pixel; RECORD_BYTES - 1]).unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn counts_records() {
        let f = write_records(&[(3, 10), (9, 200)]);
        let (pixels, labels) = read_cifar10_file(f.path()).unwrap();
        assert_eq!(labels, [3, 9]);
        assert_eq!(pixels.len(), 2 * 3072);
        assert_eq!(pixels[3072], 200.0 / 255.0);
    }

    #[test]
    fn zero_record_standardizes_to_constant() {
        let f = write_records(&[(0, 0)]);
        let (pixels, labels) = read_cifar10_file(f.path()).unwrap();
        let images = Tensor::from_vec(&[1, 3, 32, 32], pixels).unwrap();
        let ds = Dataset::new(images, labels, 10, None).unwrap();
        assert_eq!(ds.labels, [0]);
        assert!(ds.images.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn truncation_and_bad_labels_report_offsets() {
        let mut f = write_records(&[(1, 0)]);
        f.write_all(&[2, 0, 0]).unwrap();
        f.flush().unwrap();
        match read_cifar10_file(f.path()) {
            Err(Error::Load { offset, .. }) => assert_eq!(offset, RECORD_BYTES as u64),
            other => panic!("{other:?}"),
        }
        let f = write_records(&[(1, 0), (10, 0)]);
        match read_cifar10_file(f.path()) {
            Err(Error::Load { offset, reason, .. }) => {
                assert_eq!(offset, RECORD_BYTES as u64);
                assert!(reason.contains("10"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loads_split_directory() {
        let dir = tempfile::tempdir().unwrap();
        let rec = write_records(&[(6, 50), (1, 100)]);
        std::fs::copy(rec.path(), dir.path().join("test_batch.bin")).unwrap();
        let ds = load_cifar10(dir.path(), Split::Test, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.image_shape(), [3, 32, 32]);
        assert!(load_cifar10(dir.path(), Split::Train, None).is_err());
    }
}
