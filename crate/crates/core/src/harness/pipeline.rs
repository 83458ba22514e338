use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DataConfig, DataFormat, ExperimentConfig, ModelKind};
use crate::autoencoder::AutoencoderOptions;
use crate::data::{
    downsample_rows, idx_dataset, load_csv, load_idx_images, load_idx_labels, train_test_split,
    Dataset, MNIST_FILES,
};
use crate::deep::{
    discriminative_pretrain, evaluate, finetune, init_classifier, pretrain_stack,
    unroll_to_classifier, PretrainReport, StackSpec, UnitKind,
};
use crate::error::{Error, Result};
use crate::nn::NetworkParams;
use crate::optim::{Algorithm, History, OptimizerConfig};
use crate::rbm::CdConfig;

fn idx_paths(d: &DataConfig) -> [PathBuf; 4] {
    let explicit = [
        &d.train_images,
        &d.train_labels,
        &d.test_images,
        &d.test_labels,
    ];
    let dir = d.dir.clone().unwrap_or_default();
    std::array::from_fn(|i| {
        explicit[i]
            .clone()
            .unwrap_or_else(|| dir.join(MNIST_FILES[i]))
    })
}

fn resized(ds: Dataset) -> Result<Dataset> {
    let x = downsample_rows(&ds.x)?;
    Dataset::new(x, ds.labels, ds.n_classes)
}

/// Loads the training and test sets described by `cfg`.
pub fn load_data(cfg: &DataConfig) -> Result<(Dataset, Dataset)> {
    let (mut train, mut test) = match cfg.format {
        DataFormat::Idx => {
            let [tri, trl, tei, tel] = idx_paths(cfg);
            let train_labels = load_idx_labels(&trl)?;
            let test_labels = load_idx_labels(&tel)?;
            let k = cfg.n_classes.unwrap_or_else(|| {
                train_labels
                    .iter()
                    .chain(&test_labels)
                    .max()
                    .map_or(0, |&m| m as usize + 1)
            });
            let train = idx_dataset(&load_idx_images(&tri)?, &train_labels, k)?;
            let test = idx_dataset(&load_idx_images(&tei)?, &test_labels, k)?;
            (train, test)
        }
        DataFormat::Csv => {
            let path = cfg
                .csv
                .as_ref()
                .ok_or_else(|| Error::Config(vec!["data.csv: missing".into()]))?;
            let ds = load_csv(path, cfg.has_header)?.into_dataset(cfg.n_classes)?;
            let n_train = cfg.n_train.unwrap_or(ds.len());
            let n_test = cfg.n_test.unwrap_or(ds.len().saturating_sub(n_train));
            train_test_split(&ds, n_train, n_test, cfg.split_seed)?
        }
    };
    if let Some(n) = cfg.train_limit {
        train = train.head(n);
    }
    if let Some(n) = cfg.test_limit {
        test = test.head(n);
    }
    if cfg.resize {
        train = resized(train)?;
        test = resized(test)?;
    }
    Ok((train, test))
}

/// Everything one experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub net: NetworkParams,
    pub test_error: f64,
    pub train_error: f64,
    /// Test error of the unrolled stack before fine-tuning.
    pub pretrained_test_error: Option<f64>,
    pub pretrain: Option<PretrainReport>,
    /// One history per supervised training round.
    pub finetune: Vec<History>,
    pub seconds: f64,
}

fn optimizer(cfg: &ExperimentConfig, learning_rate: f64, epochs: usize) -> OptimizerConfig {
    OptimizerConfig {
        algorithm: Algorithm::Minibatch,
        learning_rate,
        momentum: cfg.momentum,
        batch_size: cfg.batch_size,
        epochs,
        shuffle_seed: cfg.shuffle_seed(),
    }
}

pub fn stack_spec(cfg: &ExperimentConfig) -> StackSpec {
    let unit = if cfg.model == ModelKind::Dbn {
        UnitKind::Rbm
    } else {
        UnitKind::Autoencoder
    };
    StackSpec {
        hidden_sizes: cfg.hidden_sizes.clone(),
        unit,
        cd: CdConfig {
            k: cfg.cd_k,
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            weight_decay: cfg.l2,
            epochs: cfg.epochs_pretrain,
            batch_size: cfg.batch_size,
            seed: cfg.shuffle_seed(),
            binary_reconstruction: cfg.binary_reconstruction,
            sample_data_hidden: false,
        },
        optimizer: optimizer(cfg, cfg.learning_rate, cfg.epochs_pretrain),
        autoencoder: AutoencoderOptions {
            sparsity: cfg.sparsity(),
            corruption: cfg.corruption_spec(),
            reg: cfg.regularizer(),
        },
    }
}

/// Builds, trains and evaluates the model described by `cfg`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = train.n_classes;
    let n_in = train.features();
    if test.features() != n_in {
        return Err(Error::shape(
            "run_experiment",
            (train.len(), n_in),
            (test.len(), test.features()),
        ));
    }

    let (fit, val) = if cfg.validation_size > 0 {
        let n = train
            .len()
            .checked_sub(cfg.validation_size)
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "validation_size {} exceeds the training set",
                    cfg.validation_size
                ))
            })?;
        let (a, b) = train_test_split(train, n, cfg.validation_size, cfg.seed)?;
        (a, Some(b))
    } else {
        (train.clone(), None)
    };
    let ft_opt = optimizer(cfg, cfg.finetune_rate(), cfg.epochs_finetune);
    let objective = cfg.objective();
    let early = cfg.early_stopping();

    let mut pretrain = None;
    let mut pretrained_test_error = None;
    let mut histories = Vec::new();
    let net = match cfg.model {
        ModelKind::Dbn | ModelKind::Sae | ModelKind::Sdae => {
            let stack = pretrain_stack(&fit.x, &stack_spec(cfg), &mut rng)?;
            let net = unroll_to_classifier(
                &stack.hidden_layers(),
                n_in,
                k,
                cfg.output_activation,
                &mut rng,
            )?;
            pretrain = Some(stack.report);
            if cfg.finetune && cfg.epochs_finetune > 0 {
                pretrained_test_error = Some(evaluate(&net, test)?);
                let (net, h) = finetune(net, &fit, val.as_ref(), &ft_opt, objective, early)?;
                histories.push(h);
                net
            } else {
                net
            }
        }
        ModelKind::Mlp => {
            let mut sizes = vec![n_in];
            sizes.extend(&cfg.hidden_sizes);
            sizes.push(k);
            let mut net = init_classifier(&sizes, cfg.output_activation, &mut rng)?;
            net.hidden_activation = cfg.hidden_activation;
            let (net, h) = finetune(net, &fit, val.as_ref(), &ft_opt, objective, early)?;
            histories.push(h);
            net
        }
        ModelKind::DiscPretrain => {
            let mut sizes = vec![n_in];
            sizes.extend(&cfg.hidden_sizes);
            sizes.push(k);
            let (net, hs) = discriminative_pretrain(
                &sizes,
                &fit,
                val.as_ref(),
                &ft_opt,
                objective,
                cfg.output_activation,
                &mut rng,
            )?;
            histories = hs;
            net
        }
    };
    if !net.is_finite() {
        return Err(Error::Numeric("trained parameters are not finite".into()));
    }
    Ok(ExperimentOutcome {
        test_error: evaluate(&net, test)?,
        train_error: evaluate(&net, train)?,
        net,
        pretrained_test_error,
        pretrain,
        finetune: histories,
        seconds: start.elapsed().as_secs_f64(),
    })
}
