use crate::data::{load_cifar10, synth_dataset_with, Dataset, Split};
use crate::error::{config_err, Error, Result};
use crate::norm::GroupWidth;
use crate::tensor::derive_seed;
use crate::train::TrainConfig;
use crate::zoo::{build_toycnn, ModelSpec, NormKind, NormSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

/// Environment variable overriding `output.directory`.
pub const OUT_ENV: &str = "DYNORM_OUT";
/// Environment variable naming the CIFAR-10 directory when the config
/// leaves `data.path` unset.
pub const CIFAR_ENV: &str = "DYNORM_CIFAR10_DIR";

fn default_r() -> usize {
    4
}

fn default_g() -> GroupWidth {
    GroupWidth::PerGroup(1)
}

fn default_width() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub norm: NormKind,
    #[serde(default = "default_r")]
    pub r: usize,
    #[serde(default = "default_g")]
    pub g: GroupWidth,
    #[serde(default = "default_width")]
    pub width: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synth,
    Cifar10,
}

fn default_image_size() -> usize {
    16
}

fn default_classes() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: Source,
    /// CIFAR-10 directory; falls back to `DYNORM_CIFAR10_DIR`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    /// Synthetic images only.
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    /// Synthetic images only; CIFAR-10 always has 10.
    #[serde(default = "default_classes")]
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
}

/// A complete experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

/// Train / validation / test splits sharing the training standardization.
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        reason: e.to_string(),
    }
}

impl RunConfig {
    /// Parses JSON text; errors carry the offending line.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(json_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies `section.key=value` overrides. Values are read as JSON when
    /// they parse, otherwise as strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = serde_json::to_value(self)?;
        for item in overrides {
            let Some((key, raw)) = item.split_once('=') else {
                return config_err(format!("override {item:?} is not key=value"));
            };
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut root;
            let parts: Vec<&str> = key.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let Value::Object(map) = node else {
                    return config_err(format!("override key {key:?} does not name a config field"));
                };
                if i + 1 == parts.len() {
                    map.insert(part.to_string(), value.clone());
                    break;
                }
                node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
            }
        }
        let cfg: RunConfig = serde_json::from_value(root).map_err(|e| Error::Config(format!("override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model_spec().map(|_| ())
    }

    /// Output directory, honouring `DYNORM_OUT`.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.directory.clone(),
        }
    }

    pub fn classes(&self) -> usize {
        match self.data.source {
            Source::Synth => self.data.classes,
            Source::Cifar10 => 10,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match self.data.source {
            Source::Synth => [3, self.data.image_size, self.data.image_size],
            Source::Cifar10 => [3, 32, 32],
        }
    }

    pub fn norm_spec(&self) -> NormSpec {
        NormSpec::new(self.model.norm, self.model.r, self.model.g)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        build_toycnn(self.norm_spec(), self.model.width, self.classes(), self.input_shape())
    }

    pub fn load_data(&self) -> Result<Splits> {
        let d = &self.data;
        if d.train_size == 0 || d.val_size == 0 || d.test_size == 0 {
            return config_err("train_size, val_size and test_size must be positive");
        }
        match d.source {
            Source::Synth => {
                let train = synth_dataset_with(d.seed, d.train_size, d.classes, d.image_size, None)?;
                let constants = Some(train.standardization.clone());
                let split = |tag: u64, n: usize| {
                    synth_dataset_with(derive_seed(&[d.seed, tag]), n, d.classes, d.image_size, constants.clone())
                };
                Ok(Splits {
                    val: split(1, d.val_size)?,
                    test: split(2, d.test_size)?,
                    train,
                })
            }
            Source::Cifar10 => {
                let dir = match (&d.path, std::env::var_os(CIFAR_ENV)) {
                    (Some(p), _) => p.clone(),
                    (None, Some(p)) => PathBuf::from(p),
                    (None, None) => return config_err(format!("data.path is unset and {CIFAR_ENV} is not set")),
                };
                let full = load_cifar10(&dir, Split::Train, None)?;
                let constants = Some(full.standardization.clone());
                let test = load_cifar10(&dir, Split::Test, constants)?;
                Ok(Splits {
                    train: full.slice(0, d.train_size)?,
                    val: full.slice(d.train_size, d.val_size)?,
                    test: test.slice(0, d.test_size.min(test.len()))?,
                })
            }
        }
    }
}
