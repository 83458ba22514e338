//! Command-line front end: training, evaluation, sweeps, gradient checks
//! and CSV resizing, plus the JSON model file format.

pub mod model_file;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use layerwise::data::{downsample_rows, load_csv, write_csv, PixelTable};
use layerwise::deep::evaluate;
use layerwise::harness::{
    compose_optimal, emit_curves, gradcheck, load_data, persist_results, run_experiment, run_sweep,
    select_best, DataConfig, DataFormat, ExperimentConfig, SweepSpec, GRADCHECK_TOLERANCE,
};
use layerwise::optim::{EpochRecord, History};
use layerwise::{Error, Result};

pub use model_file::{load_model, save_model, ModelFile};

#[derive(Debug, Parser)]
#[command(
    name = "layerwise",
    version,
    about = "Layer-wise pre-training of deep networks"
)]
pub struct Cli {
    /// Worker threads for the numeric kernels; defaults to the config's
    /// `threads`, else 1.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a JSON config, save it and print its test error.
    Train(TrainArgs),
    /// Print the test error of a saved model.
    Eval(EvalArgs),
    /// Vary one config field at a time and log every trial as JSON lines.
    Sweep(SweepArgs),
    /// Compare backprop with finite differences on a toy-sized model.
    Gradcheck(GradcheckArgs),
    /// Halve the image dimensions of a label-first pixel CSV.
    Resize(ResizeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub config: PathBuf,
    /// Model file to write.
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs_finetune: Option<usize>,
    /// Directory for the learning-curve CSVs; defaults to the model's.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub model: PathBuf,
    /// Config whose `data` section names the test set.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding the four IDX files.
    #[arg(long, conflicts_with = "csv")]
    pub data_dir: Option<PathBuf>,
    /// Label-first pixel CSV; every row is evaluated.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub has_header: bool,
    /// Halve image dimensions before evaluating.
    #[arg(long)]
    pub resize: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub config: PathBuf,
    /// JSON-lines results file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs_finetune: Option<usize>,
    /// Trials run concurrently; results are identical for any value.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Also write the config composed of every axis's best value.
    #[arg(long)]
    pub optimal: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Experiment config; the default MLP when omitted.
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

#[derive(Debug, Args)]
pub struct ResizeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long)]
    pub has_header: bool,
}

/// Process exit status for an error: 1 invalid input or configuration,
/// 2 data or file problems, 3 numeric failure.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parameter(_) | Error::Unsupported(_) | Error::Capacity { .. } => {
            1
        }
        Error::Io { .. }
        | Error::Format { .. }
        | Error::Parse { .. }
        | Error::Range(_)
        | Error::Shape { .. }
        | Error::InvalidShape { .. } => 2,
        Error::Numeric(_) | Error::Selection(_) => 3,
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Runs one parsed command line, writing its report to `out`.
pub fn run(cli: &Cli, out: &mut impl Write) -> Result<()> {
    let config_threads = match &cli.command {
        Command::Train(a) => ExperimentConfig::load(&a.config)?.threads,
        _ => None,
    };
    let threads = cli.threads.or(config_threads).unwrap_or(1);
    if threads == 0 {
        return Err(Error::Config(vec!["threads: must be at least 1".into()]));
    }
    let mut report = Vec::new();
    let result = with_threads(threads, || dispatch(&cli.command, &mut report));
    out.write_all(&report).map_err(stdout_err)?;
    result
}

#[cfg(feature = "parallel")]
fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not start {threads} threads ({e}); using the global pool");
            f()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<T>(_threads: usize, f: impl FnOnce() -> T) -> T {
    f()
}

fn dispatch(cmd: &Command, out: &mut Vec<u8>) -> Result<()> {
    match cmd {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(a, out),
        Command::Resize(a) => resize(a, out),
    }
}

fn curve_path(dir: &Path, stem: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{stem}.{suffix}.csv"))
}

fn train(a: &TrainArgs, out: &mut impl Write) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs_finetune {
        cfg.epochs_finetune = e;
    }
    cfg.validate()?;
    let (train, test) = load_data(&cfg.data)?;
    let outcome = run_experiment(&cfg, &train, &test)?;
    save_model(&a.out, cfg.model, &outcome.net)?;

    let dir = a
        .curves
        .clone()
        .or_else(|| a.out.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let stem = a
        .out
        .file_stem()
        .map_or("model".into(), |s| s.to_string_lossy().into_owned());
    if let Some(report) = &outcome.pretrain {
        for (l, layer) in report.layers.iter().enumerate() {
            let h = History {
                epochs: layer
                    .curve
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| EpochRecord {
                        epoch: i + 1,
                        train_loss: e,
                        val_error: None,
                    })
                    .collect(),
                ..Default::default()
            };
            emit_curves(&h, curve_path(&dir, &stem, &format!("pretrain{}", l + 1)))?;
        }
    }
    for (i, h) in outcome.finetune.iter().enumerate() {
        let suffix = if outcome.finetune.len() == 1 {
            "finetune".to_string()
        } else {
            format!("finetune{}", i + 1)
        };
        emit_curves(h, curve_path(&dir, &stem, &suffix))?;
    }
    if let Some(e) = outcome.pretrained_test_error {
        log::info!("test error before fine-tuning: {e}");
    }
    log::info!(
        "train error {} in {:.1}s",
        outcome.train_error,
        outcome.seconds
    );
    writeln!(out, "test_error={}", outcome.test_error).map_err(stdout_err)
}

fn eval(a: &EvalArgs, out: &mut impl Write) -> Result<()> {
    let (_, net) = load_model(&a.model)?;
    let mut data = match &a.config {
        Some(p) => ExperimentConfig::load(p)?.data,
        None => DataConfig::default(),
    };
    if let Some(d) = &a.data_dir {
        data.format = DataFormat::Idx;
        data.dir = Some(d.clone());
    }
    if let Some(c) = &a.csv {
        data = DataConfig {
            format: DataFormat::Csv,
            csv: Some(c.clone()),
            has_header: a.has_header,
            n_train: Some(0),
            ..data
        };
    }
    if a.config.is_none() && a.data_dir.is_none() && a.csv.is_none() {
        return Err(Error::Config(vec![
            "eval needs --config, --data-dir or --csv".into(),
        ]));
    }
    data.resize |= a.resize;
    data.n_classes = Some(net.output_size());
    let (_, test) = load_data(&data)?;
    if test.features() != net.input_size() {
        return Err(Error::InvalidShape {
            op: "eval",
            msg: format!(
                "model expects {} input features but the data has {}",
                net.input_size(),
                test.features()
            ),
        });
    }
    writeln!(out, "test_error={}", evaluate(&net, &test)?).map_err(stdout_err)
}

fn sweep(a: &SweepArgs, out: &mut impl Write) -> Result<()> {
    let mut spec = SweepSpec::load(&a.config)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(e) = a.epochs_finetune {
        spec.epochs_finetune = Some(e);
    }
    spec.validate()?;
    let (train, test) = load_data(&spec.defaults.data)?;
    let results = run_sweep(&spec, &train, &test, a.workers)?;
    persist_results(&results, &a.out)?;
    for r in &results {
        let err = r
            .test_error
            .map_or_else(|| "failed".to_string(), |e| e.to_string());
        writeln!(out, "{}={} test_error={err}", r.parameter_name, r.value).map_err(stdout_err)?;
    }
    let best = select_best(&results)?;
    for b in &best {
        writeln!(
            out,
            "best {}={} test_error={}",
            b.parameter_name, b.value, b.test_error
        )
        .map_err(stdout_err)?;
    }
    if let Some(p) = &a.optimal {
        let cfg = compose_optimal(&spec, &best)?;
        let json = serde_json::to_string_pretty(&cfg).expect("config serializes");
        std::fs::write(p, json).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn gradcheck_cmd(a: &GradcheckArgs, out: &mut impl Write) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if a.seeds == 0 {
        return Err(Error::Config(vec!["seeds: must be at least 1".into()]));
    }
    let mut worst = 0.0f64;
    for seed in a.seed..a.seed + a.seeds {
        worst = worst.max(gradcheck(&cfg, seed)?.max_error());
    }
    let passed = worst <= GRADCHECK_TOLERANCE;
    writeln!(out, "max_relative_error={worst:e}").map_err(stdout_err)?;
    writeln!(out, "gradcheck={}", if passed { "PASS" } else { "FAIL" }).map_err(stdout_err)?;
    if passed {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed: {worst:e} exceeds {GRADCHECK_TOLERANCE:e}"
        )))
    }
}

fn resize(a: &ResizeArgs, out: &mut impl Write) -> Result<()> {
    let table = load_csv(&a.input, a.has_header)?;
    // The CSV schema holds integer pixels, so block means are rounded.
    let resized = PixelTable {
        pixels: downsample_rows(&table.pixels)?.map(f64::round),
        labels: table.labels,
    };
    write_csv(&a.output, &resized)?;
    writeln!(
        out,
        "resized {} rows: {} -> {} pixels",
        resized.labels.len(),
        table.pixels.cols(),
        resized.pixels.cols()
    )
    .map_err(stdout_err)
}
