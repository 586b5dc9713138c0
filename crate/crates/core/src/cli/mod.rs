//! The `dynorm` command-line tool: config-driven training and evaluation,
//! gradient checks, cost reports and affine-coefficient dumps.

mod affine;
mod commands;
mod config;
mod gradcheck;

pub use affine::{dump_affine, pearson, AffineDump, AffineRow, LayerAffine, CSV_HEADER};
pub use commands::{run, Cli, Command, METRICS_FILE, MANIFEST_FILE, PARAMS_FILE, AFFINE_CSV, AFFINE_TENSORS};
pub use config::{DataConfig, ModelConfig, OutputConfig, RunConfig, Source, Splits, CIFAR_ENV, OUT_ENV};
pub use gradcheck::{check_layer, CheckLayer, GroupResult, CLI_TOLERANCE, STEP};
