//! Greedy layer-wise pre-training of RBM and autoencoder stacks, unrolling
//! into a classifier, supervised fine-tuning and evaluation.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    sigmoid_init_sigma, train_autoencoder, AutoencoderOptions, AutoencoderParams,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{init_layer, Activation, InitScheme, LayerParams, NetworkParams, Objective};
use crate::optim::{train_network, EarlyStoppingConfig, History, OptimizerConfig, Validation};
use crate::rbm::{hidden_probs, train_rbm, CdConfig, RbmParams};

/// Standard deviation of a freshly attached output layer.
pub const OUTPUT_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Rbm,
    Autoencoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    pub hidden_sizes: Vec<usize>,
    pub unit: UnitKind,
    /// Used for RBM layers. Layer `l` shuffles with `seed + l`.
    pub cd: CdConfig,
    /// Used for autoencoder layers. Layer `l` shuffles with `shuffle_seed + l`.
    pub optimizer: OptimizerConfig,
    pub autoencoder: AutoencoderOptions,
}

/// A trained building block of a stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PretrainedUnit {
    Rbm(RbmParams),
    Autoencoder(AutoencoderParams),
}

impl PretrainedUnit {
    /// The feature map as a feed-forward layer (RBM weights transposed).
    pub fn hidden_layer(&self) -> LayerParams {
        match self {
            PretrainedUnit::Rbm(r) => LayerParams {
                weights: r.weights.transpose(),
                bias: r.hidden_bias.clone(),
            },
            PretrainedUnit::Autoencoder(a) => a.encoder.clone(),
        }
    }

    /// Hidden activation probabilities for each row of `x`.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            PretrainedUnit::Rbm(r) => hidden_probs(r, x),
            PretrainedUnit::Autoencoder(a) => a.encode(x),
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            PretrainedUnit::Rbm(r) => r.n_hidden(),
            PretrainedUnit::Autoencoder(a) => a.hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    /// Per-epoch reconstruction error.
    pub curve: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub layers: Vec<LayerReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub units: Vec<PretrainedUnit>,
    pub report: PretrainReport,
}

impl Stack {
    pub fn hidden_layers(&self) -> Vec<LayerParams> {
        self.units
            .iter()
            .map(PretrainedUnit::hidden_layer)
            .collect()
    }
}

/// Trains each layer on the hidden probabilities of the one below it.
/// Autoencoder stacks keep only their encoders.
pub fn pretrain_stack(
    x: &Matrix,
    spec: &StackSpec,
    rng: &mut (impl Rng + ?Sized),
) -> Result<Stack> {
    if spec.hidden_sizes.is_empty() || spec.hidden_sizes.contains(&0) {
        return Err(Error::Parameter(format!(
            "stack needs positive hidden sizes, got {:?}",
            spec.hidden_sizes
        )));
    }
    let mut units = Vec::with_capacity(spec.hidden_sizes.len());
    let mut report = PretrainReport::default();
    let mut input: Option<Matrix> = None;
    for (l, &size) in spec.hidden_sizes.iter().enumerate() {
        let data = input.as_ref().unwrap_or(x);
        let start = Instant::now();
        let (unit, history) = pretrain_layer(data, size, l, spec, rng)?;
        let seconds = start.elapsed().as_secs_f64();
        log::info!(
            "pre-trained layer {} ({} -> {size}) in {seconds:.1}s, final error {:?}",
            l + 1,
            data.cols(),
            history.last_loss()
        );
        report.layers.push(LayerReport {
            curve: history.epochs.iter().map(|e| e.train_loss).collect(),
            seconds,
        });
        if l + 1 < spec.hidden_sizes.len() {
            input = Some(unit.encode(data)?);
        }
        units.push(unit);
    }
    Ok(Stack { units, report })
}

/// Trains the `index`-th layer of a stack on `data`.
pub fn pretrain_layer(
    data: &Matrix,
    size: usize,
    index: usize,
    spec: &StackSpec,
    rng: &mut (impl Rng + ?Sized),
) -> Result<(PretrainedUnit, History)> {
    match spec.unit {
        UnitKind::Rbm => {
            let cfg = CdConfig {
                seed: spec.cd.seed.wrapping_add(index as u64),
                ..spec.cd.clone()
            };
            let (rbm, h) = train_rbm(data, size, &cfg, rng)?;
            Ok((PretrainedUnit::Rbm(rbm), h))
        }
        UnitKind::Autoencoder => {
            let opt = OptimizerConfig {
                shuffle_seed: spec.optimizer.shuffle_seed.wrapping_add(index as u64),
                ..spec.optimizer.clone()
            };
            let (ae, h) = train_autoencoder(data, size, &spec.autoencoder, &opt, rng)?;
            Ok((PretrainedUnit::Autoencoder(ae), h))
        }
    }
}

/// Appends a fresh `N(0, 0.01^2)` output layer to pre-trained hidden layers.
pub fn unroll_to_classifier(
    hidden: &[LayerParams],
    input_size: usize,
    n_classes: usize,
    output_activation: Activation,
    rng: &mut (impl Rng + ?Sized),
) -> Result<NetworkParams> {
    if n_classes < 2 {
        return Err(Error::Parameter(format!(
            "a classifier needs at least 2 classes, got {n_classes}"
        )));
    }
    let top = hidden.last().map_or(input_size, LayerParams::outputs);
    let output = init_layer(
        top,
        n_classes,
        InitScheme::Gaussian {
            sigma: OUTPUT_INIT_STD,
        },
        rng,
    )?;
    let mut layers = hidden.to_vec();
    layers.push(output);
    if layers[0].inputs() != input_size {
        return Err(Error::shape(
            "unroll_to_classifier",
            (1, input_size),
            layers[0].weights.shape(),
        ));
    }
    NetworkParams::new(layers, Activation::Sigmoid, output_activation)
}

/// Fresh network with sigmoid-scaled Gaussian hidden layers and a small
/// output layer.
pub fn init_classifier(
    sizes: &[usize],
    output_activation: Activation,
    rng: &mut (impl Rng + ?Sized),
) -> Result<NetworkParams> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Parameter(format!(
            "layer sizes need at least two positive entries, got {sizes:?}"
        )));
    }
    let n = sizes.len();
    let hidden = (0..n - 2)
        .map(|l| {
            let sigma = sigmoid_init_sigma(sizes[l], sizes[l + 1]);
            init_layer(sizes[l], sizes[l + 1], InitScheme::Gaussian { sigma }, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    unroll_to_classifier(&hidden, sizes[0], sizes[n - 1], output_activation, rng)
}

/// Supervised training of the whole network. With a validation set and
/// early stopping, the best-validation snapshot is returned.
pub fn finetune(
    net: NetworkParams,
    train: &Dataset,
    val: Option<&Dataset>,
    opt: &OptimizerConfig,
    objective: Objective,
    early_stop: Option<EarlyStoppingConfig>,
) -> Result<(NetworkParams, History)> {
    if train.features() != net.input_size() || train.n_classes != net.output_size() {
        return Err(Error::shape(
            "finetune",
            (train.features(), train.n_classes),
            (net.input_size(), net.output_size()),
        ));
    }
    let validation = val.map(|v| Validation {
        error: Box::new(move |t: &crate::optim::NetworkTrainer| evaluate(&t.net, v)),
        early_stopping: early_stop,
    });
    train_network(net, &train.x, &train.targets, objective, opt, validation)
}

/// Inserts a freshly initialized hidden layer of `size` units below the
/// output layer, which is re-initialized to accept it. Existing hidden
/// layers are kept as they are.
pub fn insert_hidden_layer(
    net: &NetworkParams,
    size: usize,
    rng: &mut (impl Rng + ?Sized),
) -> Result<NetworkParams> {
    let n = net.layers.len();
    let below = net.layers[n - 1].inputs();
    let sigma = sigmoid_init_sigma(below, size);
    let mut hidden: Vec<LayerParams> = net.layers[..n - 1].to_vec();
    hidden.push(init_layer(
        below,
        size,
        InitScheme::Gaussian { sigma },
        rng,
    )?);
    unroll_to_classifier(
        &hidden,
        net.input_size(),
        net.output_size(),
        net.output_activation,
        rng,
    )
}

/// Discriminative pre-training: trains a one-hidden-layer network, then
/// repeatedly inserts the next hidden layer below the output and retrains
/// the whole network. `sizes` lists input, hidden layers and output.
pub fn discriminative_pretrain(
    sizes: &[usize],
    train: &Dataset,
    val: Option<&Dataset>,
    opt: &OptimizerConfig,
    objective: Objective,
    output_activation: Activation,
    rng: &mut (impl Rng + ?Sized),
) -> Result<(NetworkParams, Vec<History>)> {
    if sizes.len() < 3 {
        return Err(Error::Parameter(format!(
            "discriminative pre-training needs at least one hidden layer, got sizes {sizes:?}"
        )));
    }
    let n_out = sizes[sizes.len() - 1];
    let mut net = init_classifier(&[sizes[0], sizes[1], n_out], output_activation, rng)?;
    let mut histories = Vec::new();
    for (round, &size) in sizes[1..sizes.len() - 1].iter().enumerate() {
        if round > 0 {
            net = insert_hidden_layer(&net, size, rng)?;
        }
        let round_opt = OptimizerConfig {
            shuffle_seed: opt.shuffle_seed.wrapping_add(round as u64),
            ..opt.clone()
        };
        let (trained, h) = finetune(net, train, val, &round_opt, objective, None)?;
        net = trained;
        histories.push(h);
    }
    Ok((net, histories))
}

/// Index of the largest output per row; the lowest index wins ties.
pub fn predict(net: &NetworkParams, x: &Matrix) -> Result<Vec<usize>> {
    Ok(net.predict_proba(x)?.argmax_rows())
}

/// Fraction of misclassified examples.
pub fn evaluate(net: &NetworkParams, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Parameter(
            "cannot evaluate on an empty data set".into(),
        ));
    }
    let pred = predict(net, &ds.x)?;
    let wrong = pred.iter().zip(&ds.labels).filter(|(p, l)| p != l).count();
    Ok(wrong as f64 / ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LossKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn binary_data(m: usize, n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(m, n, |_, _| if rng.gen::<f64>() < 0.4 { 1.0 } else { 0.0 })
    }

    fn small_spec(unit: UnitKind, sizes: Vec<usize>) -> StackSpec {
        StackSpec {
            hidden_sizes: sizes,
            unit,
            cd: CdConfig {
                learning_rate: 0.1,
                epochs: 3,
                batch_size: 10,
                seed: 7,
                ..Default::default()
            },
            optimizer: OptimizerConfig {
                learning_rate: 0.5,
                epochs: 3,
                batch_size: 10,
                shuffle_seed: 7,
                ..Default::default()
            },
            autoencoder: AutoencoderOptions::default(),
        }
    }

    #[test]
    fn stack_shapes_and_report() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = binary_data(30, 12, &mut rng);
        for unit in [UnitKind::Rbm, UnitKind::Autoencoder] {
            let stack = pretrain_stack(&x, &small_spec(unit, vec![8, 5]), &mut rng).unwrap();
            let layers = stack.hidden_layers();
            assert_eq!(layers.len(), 2);
            assert_eq!(layers[0].weights.shape(), (8, 12));
            assert_eq!(layers[1].weights.shape(), (5, 8));
            assert_eq!(stack.report.layers.len(), 2);
            assert!(stack.report.layers.iter().all(|r| r.curve.len() == 3));
        }
        let one = pretrain_stack(&x, &small_spec(UnitKind::Rbm, vec![4]), &mut rng).unwrap();
        assert_eq!(one.report.layers.len(), 1);
    }

    #[test]
    fn second_layer_trains_on_first_layer_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = binary_data(30, 10, &mut rng);
        for unit in [UnitKind::Rbm, UnitKind::Autoencoder] {
            let spec = small_spec(unit, vec![6, 4]);
            let mut a = ChaCha8Rng::seed_from_u64(3);
            let stack = pretrain_stack(&x, &spec, &mut a).unwrap();

            let mut b = ChaCha8Rng::seed_from_u64(3);
            let (first, _) = pretrain_layer(&x, 6, 0, &spec, &mut b).unwrap();
            assert_eq!(first, stack.units[0]);
            let h1 = match &first {
                PretrainedUnit::Rbm(r) => hidden_probs(r, &x).unwrap(),
                PretrainedUnit::Autoencoder(ae) => ae.encode(&x).unwrap(),
            };
            let (second, _) = pretrain_layer(&h1, 4, 1, &spec, &mut b).unwrap();
            assert_eq!(second, stack.units[1]);
        }
    }

    #[test]
    fn rbm_hidden_layer_matches_hidden_probs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = binary_data(7, 5, &mut rng);
        let rbm = crate::rbm::init_rbm(5, 3, &x, &mut rng).unwrap();
        let unit = PretrainedUnit::Rbm(rbm.clone());
        let mut via_layer = unit.hidden_layer().affine(&x).unwrap();
        via_layer.map_inplace(crate::nn::sigmoid);
        assert_eq!(via_layer, hidden_probs(&rbm, &x).unwrap());
    }

    #[test]
    fn unroll_preserves_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = binary_data(20, 9, &mut rng);
        let stack = pretrain_stack(&x, &small_spec(UnitKind::Rbm, vec![6, 4]), &mut rng).unwrap();
        let hidden = stack.hidden_layers();
        let net = unroll_to_classifier(&hidden, 9, 10, Activation::Softmax, &mut rng).unwrap();
        assert_eq!(net.layers.len(), 3);
        assert_eq!(&net.layers[..2], &hidden[..]);
        assert_eq!(net.layers[2].weights.shape(), (10, 4));
        assert!(net.layers[2].bias.iter().all(|&b| b == 0.0));

        let probe = Matrix::from_fn(50, 9, |_, _| rng.gen::<f64>());
        let p = net.predict_proba(&probe).unwrap();
        assert!(p.max_abs() <= 0.2, "{}", p.max_abs());

        let flat = unroll_to_classifier(&[], 9, 3, Activation::Softmax, &mut rng).unwrap();
        assert_eq!(flat.layer_sizes(), vec![9, 3]);
        assert!(unroll_to_classifier(&[], 9, 1, Activation::Softmax, &mut rng).is_err());
    }

    fn toy_dataset(m: usize, rng: &mut ChaCha8Rng) -> Dataset {
        // Two classes separated by which half of the input is brighter.
        let mut labels = Vec::new();
        let x = Matrix::from_fn(m, 6, |i, j| {
            let class = i % 2;
            if j == 0 {
                labels.push(class);
            }
            let bright = (j < 3) == (class == 0);
            let base = if bright { 0.8 } else { 0.2 };
            (base + rng.gen_range(-0.15..0.15f64)).clamp(0.0, 1.0)
        });
        Dataset::new(x, labels, 2).unwrap()
    }

    #[test]
    fn zero_epoch_finetune_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = toy_dataset(20, &mut rng);
        let net = init_classifier(&[6, 4, 2], Activation::Softmax, &mut rng).unwrap();
        let opt = OptimizerConfig {
            epochs: 0,
            batch_size: 5,
            ..Default::default()
        };
        let (out, h) = finetune(
            net.clone(),
            &ds,
            None,
            &opt,
            Objective::new(LossKind::CrossEntropy),
            None,
        )
        .unwrap();
        assert_eq!(out, net);
        assert!(h.epochs.is_empty());
    }

    #[test]
    fn finetune_learns_and_tracks_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let train = toy_dataset(200, &mut rng);
        let val = toy_dataset(50, &mut rng);
        let net = init_classifier(&[6, 5, 2], Activation::Softmax, &mut rng).unwrap();
        let before = evaluate(&net, &val).unwrap();
        let opt = OptimizerConfig {
            epochs: 20,
            batch_size: 10,
            learning_rate: 0.5,
            ..Default::default()
        };
        let es = Some(EarlyStoppingConfig {
            patience: 3,
            min_delta: 0.0,
        });
        let (net, h) = finetune(
            net,
            &train,
            Some(&val),
            &opt,
            Objective::new(LossKind::CrossEntropy),
            es,
        )
        .unwrap();
        let after = evaluate(&net, &val).unwrap();
        assert!(after < before.max(0.01), "{before} -> {after}");
        assert!(h.epochs.iter().all(|e| e.val_error.is_some()));
        let best = h
            .epochs
            .iter()
            .map(|e| e.val_error.unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(after, best);
    }

    #[test]
    fn insertion_keeps_existing_hidden_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = init_classifier(&[6, 5, 3], Activation::Softmax, &mut rng).unwrap();
        let grown = insert_hidden_layer(&net, 4, &mut rng).unwrap();
        assert_eq!(grown.layer_sizes(), vec![6, 5, 4, 3]);
        assert_eq!(grown.layers[0], net.layers[0]);
        let grown = insert_hidden_layer(&grown, 2, &mut rng).unwrap();
        assert_eq!(grown.layers.len(), 4);
    }

    #[test]
    fn discriminative_pretraining_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ds = toy_dataset(60, &mut rng);
        let opt = OptimizerConfig {
            epochs: 3,
            batch_size: 10,
            ..Default::default()
        };
        let obj = Objective::new(LossKind::CrossEntropy);
        let (net, hs) = discriminative_pretrain(
            &[6, 5, 4, 2],
            &ds,
            None,
            &opt,
            obj,
            Activation::Softmax,
            &mut rng,
        )
        .unwrap();
        assert_eq!(net.layer_sizes(), vec![6, 5, 4, 2]);
        assert_eq!(hs.len(), 2);

        // With one hidden layer it is plain supervised training.
        let mut a = ChaCha8Rng::seed_from_u64(10);
        let (single, _) = discriminative_pretrain(
            &[6, 5, 2],
            &ds,
            None,
            &opt,
            obj,
            Activation::Softmax,
            &mut a,
        )
        .unwrap();
        let mut b = ChaCha8Rng::seed_from_u64(10);
        let init = init_classifier(&[6, 5, 2], Activation::Softmax, &mut b).unwrap();
        let (plain, _) = finetune(init, &ds, None, &opt, obj, None).unwrap();
        assert_eq!(single, plain);
    }

    #[test]
    fn evaluation_rates() {
        let x = Matrix::identity(3);
        let ds = Dataset::new(x.clone(), vec![0, 1, 2], 3).unwrap();
        let layer = LayerParams::new(Matrix::identity(3), vec![0.0; 3]).unwrap();
        let net = NetworkParams::new(vec![layer], Activation::Sigmoid, Activation::Linear).unwrap();
        assert_eq!(evaluate(&net, &ds).unwrap(), 0.0);

        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let ds = Dataset::new(Matrix::zeros(100, 2), labels, 10).unwrap();
        let constant = NetworkParams::new(
            vec![LayerParams::zeros(2, 10)],
            Activation::Sigmoid,
            Activation::Softmax,
        )
        .unwrap();
        assert!((evaluate(&constant, &ds).unwrap() - 0.9).abs() < 1e-15);
    }
}
