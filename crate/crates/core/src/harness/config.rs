use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{CorruptionKind, CorruptionSpec, SparsityConfig};
use crate::error::{Error, Result};
use crate::nn::{Activation, DropoutSpec, LossKind, Objective, Regularizer};
use crate::optim::EarlyStoppingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// RBM stack, unrolled and fine-tuned.
    Dbn,
    /// Stacked autoencoders without corruption.
    Sae,
    /// Stacked denoising autoencoders.
    Sdae,
    /// Plain network trained from a random start.
    #[default]
    Mlp,
    /// Discriminative layer-by-layer pre-training.
    DiscPretrain,
}

impl ModelKind {
    pub fn is_stack(self) -> bool {
        matches!(self, ModelKind::Dbn | ModelKind::Sae | ModelKind::Sdae)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    #[default]
    Idx,
    Csv,
}

/// Where the examples come from. Relative paths are taken as given, i.e.
/// relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub format: DataFormat,
    /// IDX: directory holding the four standard MNIST files.
    pub dir: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// CSV: one label-first file, split into train and test.
    pub csv: Option<PathBuf>,
    pub has_header: bool,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub split_seed: u64,
    /// Number of classes; inferred from the labels when absent.
    pub n_classes: Option<usize>,
    /// Keep only the first `n` training / test examples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// Halve both image dimensions before training.
    pub resize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            format: DataFormat::Idx,
            dir: None,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            csv: None,
            has_header: false,
            n_train: None,
            n_test: None,
            split_seed: 0,
            n_classes: None,
            train_limit: None,
            test_limit: None,
            resize: false,
        }
    }
}

/// Everything needed to build, train and evaluate one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub hidden_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub loss: LossKind,
    pub learning_rate: f64,
    /// Fine-tuning rate; defaults to `learning_rate`.
    pub finetune_learning_rate: Option<f64>,
    pub momentum: f64,
    pub l2: f64,
    pub l1: f64,
    pub batch_size: usize,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    /// Skip supervised fine-tuning of pre-trained stacks when false.
    pub finetune: bool,
    pub retain_input: f64,
    pub retain_hidden: f64,
    pub sparsity_target: Option<f64>,
    pub sparsity_weight: f64,
    pub sparsity_running_estimate: bool,
    /// Input corruption for denoising stacks (`sdae` only).
    pub corruption: CorruptionKind,
    pub corruption_level: f64,
    pub cd_k: usize,
    pub binary_reconstruction: bool,
    /// Early stopping on a held-out part of the training set.
    pub patience: Option<usize>,
    pub min_delta: f64,
    pub validation_size: usize,
    pub seed: u64,
    /// Data-order seed; defaults to `seed`.
    pub shuffle_seed: Option<u64>,
    pub threads: Option<usize>,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::Mlp,
            hidden_sizes: vec![100, 100],
            hidden_activation: Activation::Sigmoid,
            output_activation: Activation::Sigmoid,
            loss: LossKind::CrossEntropy,
            learning_rate: 1.0,
            finetune_learning_rate: None,
            momentum: 0.0,
            l2: 0.0,
            l1: 0.0,
            batch_size: 100,
            epochs_pretrain: 10,
            epochs_finetune: 10,
            finetune: true,
            retain_input: 1.0,
            retain_hidden: 1.0,
            sparsity_target: None,
            sparsity_weight: 0.0,
            sparsity_running_estimate: false,
            corruption: CorruptionKind::Masking,
            corruption_level: 0.5,
            cd_k: 1,
            binary_reconstruction: false,
            patience: None,
            min_delta: 0.0,
            validation_size: 0,
            seed: 0,
            shuffle_seed: None,
            threads: None,
            data: DataConfig::default(),
        }
    }
}

/// Deserializes JSON, reporting every unknown key and any type error as
/// one configuration error.
pub fn parse_strict<T: DeserializeOwned>(json: &str) -> Result<T> {
    match parse_collecting(json) {
        (Some(v), errs) if errs.is_empty() => Ok(v),
        (_, errs) => Err(Error::Config(errs)),
    }
}

/// The parsed value, when the JSON has the right types, alongside every
/// problem found.
pub(crate) fn parse_collecting<T: DeserializeOwned>(json: &str) -> (Option<T>, Vec<String>) {
    let mut errs = Vec::new();
    let mut de = serde_json::Deserializer::from_str(json);
    let parsed: std::result::Result<T, _> = serde_ignored::deserialize(&mut de, |path| {
        errs.push(format!("{path}: unknown key"));
    });
    match parsed.and_then(|v| de.end().map(|_| v)) {
        Ok(v) => (Some(v), errs),
        Err(e) => {
            errs.push(e.to_string());
            (None, errs)
        }
    }
}

/// Appends the problems `validate` reports to `errs`.
pub(crate) fn collect_invalid(errs: &mut Vec<String>, validated: Result<()>) {
    match validated {
        Ok(()) => {}
        Err(Error::Config(e)) => errs.extend(e),
        Err(e) => errs.push(e.to_string()),
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl ExperimentConfig {
    /// Parses and validates; the error lists unknown keys and invalid
    /// values together.
    pub fn from_json(json: &str) -> Result<Self> {
        let (cfg, mut errs) = parse_collecting::<ExperimentConfig>(json);
        if let Some(c) = &cfg {
            collect_invalid(&mut errs, c.validate());
        }
        match cfg {
            Some(c) if errs.is_empty() => Ok(c),
            _ => Err(Error::Config(errs)),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_text(path.as_ref())?)
    }

    /// Checks every field and lists all problems found.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();

        check(
            positive(self.learning_rate),
            format!("learning_rate: must be > 0, got {}", self.learning_rate),
        );
        if let Some(r) = self.finetune_learning_rate {
            check(
                positive(r),
                format!("finetune_learning_rate: must be > 0, got {r}"),
            );
        }
        check(
            (0.0..1.0).contains(&self.momentum),
            format!("momentum: must be in [0, 1), got {}", self.momentum),
        );
        check(
            nonneg(self.l2),
            format!("l2: must be >= 0, got {}", self.l2),
        );
        check(
            nonneg(self.l1),
            format!("l1: must be >= 0, got {}", self.l1),
        );
        check(self.batch_size > 0, "batch_size: must be positive".into());
        check(
            !self.hidden_sizes.contains(&0),
            format!(
                "hidden_sizes: every layer needs at least one unit, got {:?}",
                self.hidden_sizes
            ),
        );
        check(
            self.model == ModelKind::Mlp || !self.hidden_sizes.is_empty(),
            format!(
                "hidden_sizes: model {:?} needs at least one hidden layer",
                self.model
            ),
        );
        check(
            self.hidden_activation != Activation::Softmax,
            "hidden_activation: softmax is only allowed on the output layer".into(),
        );
        check(
            !(self.model.is_stack() || self.model == ModelKind::DiscPretrain)
                || self.hidden_activation == Activation::Sigmoid,
            format!(
                "hidden_activation: model {:?} uses sigmoid hidden units",
                self.model
            ),
        );
        check(
            !(self.output_activation == Activation::Softmax && self.loss == LossKind::SquaredError),
            "output_activation: softmax requires the cross_entropy loss".into(),
        );
        for (name, v) in [
            ("retain_input", self.retain_input),
            ("retain_hidden", self.retain_hidden),
        ] {
            check(
                v > 0.0 && v <= 1.0,
                format!("{name}: must be in (0, 1], got {v}"),
            );
        }
        if let Some(p) = self.sparsity_target {
            check(
                p > 0.0 && p < 1.0,
                format!("sparsity_target: must be in (0, 1), got {p}"),
            );
        }
        check(
            nonneg(self.sparsity_weight),
            format!(
                "sparsity_weight: must be >= 0, got {}",
                self.sparsity_weight
            ),
        );
        check(
            (0.0..=1.0).contains(&self.corruption_level),
            format!(
                "corruption_level: must be in [0, 1], got {}",
                self.corruption_level
            ),
        );
        check(self.cd_k >= 1, "cd_k: must be at least 1".into());
        check(
            nonneg(self.min_delta),
            format!("min_delta: must be >= 0, got {}", self.min_delta),
        );
        check(
            self.patience.is_none() || self.validation_size > 0,
            "patience: early stopping needs validation_size > 0".into(),
        );
        if let Some(t) = self.threads {
            check(t >= 1, "threads: must be at least 1".into());
        }

        let d = &self.data;
        match d.format {
            DataFormat::Idx => {
                let explicit = [
                    &d.train_images,
                    &d.train_labels,
                    &d.test_images,
                    &d.test_labels,
                ];
                check(
                    d.dir.is_some() || explicit.iter().all(|p| p.is_some()),
                    "data.dir: IDX data needs a directory or all four file paths".into(),
                );
            }
            DataFormat::Csv => {
                check(
                    d.csv.is_some(),
                    "data.csv: CSV data needs a file path".into(),
                );
                check(
                    d.n_train.is_some(),
                    "data.n_train: CSV data needs a training split size".into(),
                );
            }
        }
        if let Some(k) = d.n_classes {
            check(
                k >= 2,
                format!("data.n_classes: must be at least 2, got {k}"),
            );
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.shuffle_seed.unwrap_or(self.seed)
    }

    pub fn finetune_rate(&self) -> f64 {
        self.finetune_learning_rate.unwrap_or(self.learning_rate)
    }

    pub fn regularizer(&self) -> Regularizer {
        Regularizer {
            l2: self.l2,
            l1: self.l1,
        }
    }

    pub fn dropout(&self) -> Option<DropoutSpec> {
        let d = DropoutSpec {
            retain_input: self.retain_input,
            retain_hidden: self.retain_hidden,
        };
        (!d.is_identity()).then_some(d)
    }

    pub fn objective(&self) -> Objective {
        Objective {
            loss: self.loss,
            reg: self.regularizer(),
            dropout: self.dropout(),
        }
    }

    pub fn sparsity(&self) -> Option<SparsityConfig> {
        self.sparsity_target.map(|target| SparsityConfig {
            target,
            weight: self.sparsity_weight,
            running_estimate: self.sparsity_running_estimate,
        })
    }

    /// Corruption applied while pre-training; only denoising stacks corrupt.
    pub fn corruption_spec(&self) -> CorruptionSpec {
        if self.model == ModelKind::Sdae {
            CorruptionSpec {
                kind: self.corruption,
                level: self.corruption_level,
            }
        } else {
            CorruptionSpec::NONE
        }
    }

    pub fn early_stopping(&self) -> Option<EarlyStoppingConfig> {
        self.patience.map(|patience| EarlyStoppingConfig {
            patience,
            min_delta: self.min_delta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"data": {"dir": "x"}}"#).unwrap();
        assert_eq!(cfg.hidden_sizes, vec![100, 100]);
        assert_eq!(cfg.batch_size, 100);
        assert_eq!(cfg.learning_rate, 1.0);
    }

    #[test]
    fn lists_every_unknown_key() {
        let err = ExperimentConfig::from_json(
            r#"{"lr": 1, "data": {"dir": "x", "bogus": 2}, "epochs": 3}"#,
        )
        .unwrap_err();
        let Error::Config(msgs) = err else {
            panic!("{err}")
        };
        assert_eq!(msgs.len(), 3, "{msgs:?}");
        assert!(msgs.iter().any(|m| m.starts_with("data.bogus")));
    }

    #[test]
    fn lists_every_invalid_value() {
        let json = r#"{"learning_rate": -1, "momentum": 1.5, "retain_hidden": 0, "batch_size": 0,
                       "data": {"format": "csv"}}"#;
        let Error::Config(msgs) = ExperimentConfig::from_json(json).unwrap_err() else {
            panic!()
        };
        for field in [
            "learning_rate",
            "momentum",
            "retain_hidden",
            "batch_size",
            "data.csv",
            "data.n_train",
        ] {
            assert!(
                msgs.iter().any(|m| m.starts_with(field)),
                "{field} missing from {msgs:?}"
            );
        }
    }

    #[test]
    fn type_errors_are_config_errors() {
        let err = ExperimentConfig::from_json(r#"{"batch_size": "many"}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn roundtrips_through_json() {
        let cfg = ExperimentConfig {
            model: ModelKind::Sdae,
            l2: 5e-5,
            data: DataConfig {
                dir: Some("data/mnist".into()),
                ..Default::default()
            },
            ..Default::default()
        };
        let back = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
