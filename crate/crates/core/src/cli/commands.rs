use super::affine::dump_affine;
use super::config::RunConfig;
use super::gradcheck::{check_layer, CheckLayer, CLI_TOLERANCE};
use crate::error::{Error, Result};
use crate::norm::GroupWidth;
use crate::train::{evaluate, train, MetricsWriter};
use crate::zoo::{
    build_toycnn, count_params, mobilenetv2_cost_table, published_mnv2_figures, Network, NormKind, NormSpec, Policy,
};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const PARAMS_FILE: &str = "params.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const AFFINE_CSV: &str = "affine.csv";
pub const AFFINE_TENSORS: &str = "affine_tensors.txt";

#[derive(Debug, Parser)]
#[command(name = "dynorm", version, about = "Dynamic normalization experiments on the CPU")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a JSON config and write metrics, parameters and a manifest.
    Train {
        config: PathBuf,
        /// Override one config key, e.g. `--set train.lr=0.1`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a parameter dump on the config's test split.
    Eval {
        params: PathBuf,
        config: PathBuf,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Compare analytic gradients of one layer with central differences.
    Gradcheck {
        /// conv | fc | gfc | bn | se | dnb | dnc-a | dnc-b | loss
        layer: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the parameter and Mult-Add report of the toy CNN or MobileNetV2.
    Params {
        #[arg(long)]
        mnv2: bool,
        #[arg(long, default_value = "bn")]
        norm: NormKind,
        #[arg(short, default_value_t = 4)]
        r: usize,
        #[arg(short, default_value = "1")]
        g: GroupWidth,
        /// Which MobileNetV2 convolutions are followed by the normalization under test.
        #[arg(long, default_value = "all-bn")]
        policy: Policy,
        #[arg(long, default_value_t = 1.0)]
        width: f64,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 32)]
        input_size: usize,
    },
    /// Dump evaluation-mode α/λ of the first and last DN layers on the test split.
    DumpAffine {
        params: PathBuf,
        config: PathBuf,
        /// Comma-separated class indices; defaults to every class.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<usize>,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Reports go to `out`, errors to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Train { config, overrides } => {
            let cfg = RunConfig::load(&config)?.with_overrides(&overrides)?;
            cmd_train(&cfg, out)
        }
        Command::Eval {
            params,
            config,
            batch_size,
        } => cmd_eval(&params, &RunConfig::load(&config)?, batch_size, out),
        Command::Gradcheck { layer, seed } => cmd_gradcheck(&layer, seed, out),
        Command::Params {
            mnv2,
            norm,
            r,
            g,
            policy,
            width,
            classes,
            input_size,
        } => {
            let norm = NormSpec::new(norm, r, g);
            let report = if mnv2 {
                mnv2_report(&norm, policy)?
            } else {
                let spec = build_toycnn(norm, width, classes, [3, input_size, input_size])?;
                serde_json::to_value(count_params(&spec)?)?
            };
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(0)
        }
        Command::DumpAffine {
            params,
            config,
            classes,
        } => {
            let classes = (!classes.is_empty()).then_some(classes);
            cmd_dump_affine(&params, &RunConfig::load(&config)?, classes.as_deref(), out)
        }
    }
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    Ok(path)
}

fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let splits = cfg.load_data()?;
    let spec = cfg.model_spec()?;
    let mut net = Network::new(&spec, cfg.train.seed)?;
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir)?;
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "output_directory": dir,
        "seeds": {"data": cfg.data.seed, "train": cfg.train.seed},
        "standardization": splits.train.standardization,
        "samples": {"train": splits.train.len(), "val": splits.val.len(), "test": splits.test.len()},
        "trainable_params": net.trainable_elements(),
        "artifacts": {"metrics": METRICS_FILE, "params": PARAMS_FILE},
    });
    write_file(&dir, MANIFEST_FILE, &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    let mut writer = MetricsWriter::create(&dir.join(METRICS_FILE))?;
    let record = train(&mut net, &splits.train, &splits.val, &splits.test, &cfg.train, Some(&mut writer))?;
    write_file(&dir, PARAMS_FILE, &net.dump())?;
    writeln!(out, "{}", record.final_line())?;
    Ok(0)
}

fn load_network(params: &Path, cfg: &RunConfig) -> Result<Network> {
    let mut net = Network::new(&cfg.model_spec()?, cfg.train.seed)?;
    net.load(&std::fs::read_to_string(params)?)?;
    Ok(net)
}

fn cmd_eval(params: &Path, cfg: &RunConfig, batch_size: Option<usize>, out: &mut dyn Write) -> Result<i32> {
    let mut net = load_network(params, cfg)?;
    let splits = cfg.load_data()?;
    let bs = batch_size.unwrap_or(cfg.train.eval_batch_size);
    if bs == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let acc = evaluate(&mut net, &splits.test, bs)?;
    let report = json!({"batch_size": bs, "samples": splits.test.len(), "test_acc": acc});
    writeln!(out, "{report}")?;
    Ok(0)
}

fn cmd_gradcheck(layer: &str, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let layer: CheckLayer = layer.parse()?;
    let groups = check_layer(layer, seed)?;
    let mut ok = true;
    for g in &groups {
        let pass = g.report.passed(CLI_TOLERANCE);
        ok &= pass;
        writeln!(
            out,
            "{layer} {:<10} elements={:<3} max_rel_error={:.3e} {}",
            g.group,
            g.elements,
            g.max_rel_error(),
            if pass { "ok" } else { "FAIL" }
        )?;
    }
    Ok(if ok { 0 } else { 1 })
}

fn millions(v: usize) -> String {
    format!("{:.2}M", v as f64 / 1e6)
}

fn mnv2_report(norm: &NormSpec, policy: Policy) -> Result<Value> {
    let report = mobilenetv2_cost_table(norm, policy)?;
    let published = published_mnv2_figures(norm).map(|f| json!({"params": f.params, "mult_adds": f.mult_adds}));
    Ok(json!({
        "model": "mobilenetv2",
        "norm": norm.kind.to_string(),
        "r": norm.r,
        "g": norm.g.to_string(),
        "policy": policy.to_string(),
        "params": report.params,
        "mult_adds": report.mult_adds,
        "params_m": millions(report.params),
        "mult_adds_m": millions(report.mult_adds),
        "published": published,
        "per_layer": report.per_layer,
    }))
}

fn cmd_dump_affine(params: &Path, cfg: &RunConfig, classes: Option<&[usize]>, out: &mut dyn Write) -> Result<i32> {
    let mut net = load_network(params, cfg)?;
    let splits = cfg.load_data()?;
    let dump = dump_affine(&mut net, &splits.test, classes, cfg.train.eval_batch_size)?;
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir)?;
    let csv = write_file(&dir, AFFINE_CSV, &dump.to_csv())?;
    let tensors = write_file(&dir, AFFINE_TENSORS, &dump.tensors())?;
    let layers: Vec<&str> = dump.layers.iter().map(|l| l.layer.as_str()).collect();
    writeln!(out, "{}", json!({"csv": csv, "tensors": tensors, "layers": layers, "rows": dump.rows.len()}))?;
    Ok(0)
}
