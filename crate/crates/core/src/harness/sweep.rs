use std::fs;
use std::hash::Hasher;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{collect_invalid, parse_collecting, read_text, ExperimentConfig};
use super::pipeline::run_experiment;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::optim::History;

/// One swept parameter: a config field (dotted for nested fields, e.g.
/// `data.train_limit`) and its candidate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub defaults: ExperimentConfig,
    pub axes: Vec<Axis>,
    #[serde(default)]
    pub epochs_pretrain: Option<usize>,
    #[serde(default)]
    pub epochs_finetune: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub parameter_name: String,
    pub value: Value,
    /// Absent when the trial failed.
    pub test_error: Option<f64>,
    pub train_error: Option<f64>,
    pub wall_clock_seconds: f64,
    /// Data-order seed the trial ran with.
    pub seed: u64,
    #[serde(default)]
    pub error: Option<String>,
}

/// Per-axis winner of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub parameter_name: String,
    pub value: Value,
    pub test_error: f64,
}

/// FNV-1a of the axis name and the value's JSON text; stable across
/// platforms and releases.
pub fn trial_offset(axis: &str, value: &Value) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(axis.as_bytes());
    h.write(&[0]);
    h.write(value.to_string().as_bytes());
    h.finish()
}

/// Replaces one field of `cfg` and re-validates the result.
pub fn apply_override(
    cfg: &ExperimentConfig,
    name: &str,
    value: &Value,
) -> Result<ExperimentConfig> {
    let mut root = serde_json::to_value(cfg).expect("config serializes");
    let mut slot = &mut root;
    for part in name.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| Error::Config(vec![format!("{name}: not a config field")]))?;
    }
    *slot = value.clone();
    let out: ExperimentConfig = serde_json::from_value(root)
        .map_err(|e| Error::Config(vec![format!("{name} = {value}: {e}")]))?;
    out.validate()?;
    Ok(out)
}

impl SweepSpec {
    pub fn from_json(json: &str) -> Result<Self> {
        let (spec, mut errs) = parse_collecting::<SweepSpec>(json);
        if let Some(s) = &spec {
            collect_invalid(&mut errs, s.validate());
        }
        match spec {
            Some(s) if errs.is_empty() => Ok(s),
            _ => Err(Error::Config(errs)),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_text(path.as_ref())?)
    }

    /// The defaults with the sweep-level epoch and seed settings applied.
    pub fn base_config(&self) -> ExperimentConfig {
        let mut cfg = self.defaults.clone();
        if let Some(e) = self.epochs_pretrain {
            cfg.epochs_pretrain = e;
        }
        if let Some(e) = self.epochs_finetune {
            cfg.epochs_finetune = e;
        }
        cfg.seed = self.seed;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if let Err(Error::Config(e)) = self.defaults.validate() {
            errs.extend(e.into_iter().map(|m| format!("defaults.{m}")));
        }
        if self.axes.is_empty() {
            errs.push("axes: at least one axis is required".into());
        }
        let base = self.base_config();
        for axis in &self.axes {
            if axis.name == "data" || axis.name.starts_with("data.") {
                errs.push(format!(
                    "axes.{}: data settings are shared by every trial",
                    axis.name
                ));
                continue;
            }
            if axis.values.is_empty() {
                errs.push(format!("axes.{}: no candidate values", axis.name));
            }
            for v in &axis.values {
                if let Err(Error::Config(e)) = apply_override(&base, &axis.name, v) {
                    errs.extend(e.into_iter().map(|m| format!("axes.{}: {m}", axis.name)));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn trial_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).sum()
    }
}

fn run_trial(
    base: &ExperimentConfig,
    axis: &Axis,
    value: &Value,
    train: &Dataset,
    test: &Dataset,
) -> TrialResult {
    let start = Instant::now();
    let seed = base.seed.wrapping_add(trial_offset(&axis.name, value));
    let outcome = apply_override(base, &axis.name, value).and_then(|mut cfg| {
        cfg.shuffle_seed = Some(seed);
        run_experiment(&cfg, train, test)
    });
    let (test_error, train_error, error) = match outcome {
        Ok(o) => (Some(o.test_error), Some(o.train_error), None),
        Err(e) => {
            log::warn!("trial {} = {value} failed: {e}", axis.name);
            (None, None, Some(e.to_string()))
        }
    };
    log::info!("trial {} = {value}: test error {test_error:?}", axis.name);
    TrialResult {
        parameter_name: axis.name.clone(),
        value: value.clone(),
        test_error,
        train_error,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        seed,
        error,
    }
}

/// Runs one experiment per (axis, value) with every other field at its
/// default. Trials share the init seed and differ in data order by a
/// per-trial offset. Failures are recorded, not fatal. Results come back
/// in axis order, then value order.
///
/// With `workers > 1` trials run concurrently; each trial is still
/// deterministic, so results do not depend on the worker count.
pub fn run_sweep(
    spec: &SweepSpec,
    train: &Dataset,
    test: &Dataset,
    workers: usize,
) -> Result<Vec<TrialResult>> {
    spec.validate()?;
    let base = spec.base_config();
    let trials: Vec<(&Axis, &Value)> = spec
        .axes
        .iter()
        .flat_map(|a| a.values.iter().map(move |v| (a, v)))
        .collect();
    #[cfg(feature = "parallel")]
    if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot start {workers} workers: {e}")))?;
        return Ok(pool.install(|| {
            trials
                .par_iter()
                .map(|(a, v)| run_trial(&base, a, v, train, test))
                .collect()
        }));
    }
    let _ = workers;
    Ok(trials
        .iter()
        .map(|(a, v)| run_trial(&base, a, v, train, test))
        .collect())
}

/// Lowest test error per axis; the earlier-listed value wins ties.
pub fn select_best(results: &[TrialResult]) -> Result<Vec<Best>> {
    let mut axes: Vec<&str> = Vec::new();
    for r in results {
        if !axes.contains(&r.parameter_name.as_str()) {
            axes.push(&r.parameter_name);
        }
    }
    axes.into_iter()
        .map(|name| {
            let mut best: Option<&TrialResult> = None;
            for r in results.iter().filter(|r| r.parameter_name == name) {
                if let Some(e) = r.test_error {
                    if best.is_none_or(|b| e < b.test_error.unwrap_or(f64::INFINITY)) {
                        best = Some(r);
                    }
                }
            }
            best.map(|b| Best {
                parameter_name: name.to_string(),
                value: b.value.clone(),
                test_error: b.test_error.unwrap_or(f64::NAN),
            })
            .ok_or_else(|| Error::Selection(name.to_string()))
        })
        .collect()
}

/// The sweep's base config overridden by every per-axis winner.
pub fn compose_optimal(spec: &SweepSpec, bests: &[Best]) -> Result<ExperimentConfig> {
    let mut cfg = spec.base_config();
    for b in bests {
        cfg = apply_override(&cfg, &b.parameter_name, &b.value)?;
    }
    Ok(cfg)
}

/// One JSON object per line, keys in declaration order.
pub fn persist_results(results: &[TrialResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in results {
        let line = serde_json::to_string(r).expect("trial results serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<TrialResult>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            context: format!("{}:{}", path.display(), i + 1),
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Writes `epoch,train_loss,val_error` rows with six decimals; the
/// validation column is empty when no validation set was used.
pub fn emit_curves(history: &History, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "epoch,train_loss,val_error").map_err(io)?;
    for r in &history.epochs {
        let val = r.val_error.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(w, "{},{:.6},{val}", r.epoch, r.train_loss).map_err(io)?;
    }
    w.flush().map_err(io)
}
