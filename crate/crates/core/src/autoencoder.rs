//! Three-layer autoencoders with optional KL sparsity and input corruption.
//!
//! The network sees a corrupted copy of each input and is trained to
//! reproduce the clean one under cross-entropy. Encoder and decoder weights
//! are independent.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{
    backprop_with, init_layer, sigmoid, Activation, Backprop, InitScheme, LayerParams, LossKind,
    NetworkParams, Objective, Regularizer, PRED_CLAMP,
};
use crate::optim::{momentum_step, run_epochs, History, OptimizerConfig, Trainable, Velocity};

/// Decay of the per-batch running estimate of mean hidden activations.
pub const RUNNING_ESTIMATE_DECAY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderParams {
    pub encoder: LayerParams,
    pub decoder: LayerParams,
}

impl AutoencoderParams {
    pub fn new(encoder: LayerParams, decoder: LayerParams) -> Result<Self> {
        if decoder.inputs() != encoder.outputs() || decoder.outputs() != encoder.inputs() {
            return Err(Error::shape(
                "AutoencoderParams::new",
                encoder.weights.shape(),
                decoder.weights.shape(),
            ));
        }
        Ok(AutoencoderParams { encoder, decoder })
    }

    pub fn visible(&self) -> usize {
        self.encoder.inputs()
    }

    pub fn hidden(&self) -> usize {
        self.encoder.outputs()
    }

    /// Sigmoid hidden code for each row of `x`.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = self.encoder.affine(x)?;
        z.map_inplace(sigmoid);
        Ok(z)
    }

    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = self.decoder.affine(&self.encode(x)?)?;
        z.map_inplace(sigmoid);
        Ok(z)
    }

    pub fn to_network(&self) -> NetworkParams {
        NetworkParams {
            layers: vec![self.encoder.clone(), self.decoder.clone()],
            hidden_activation: Activation::Sigmoid,
            output_activation: Activation::Sigmoid,
        }
    }

    pub fn from_network(net: NetworkParams) -> Result<Self> {
        let [encoder, decoder]: [LayerParams; 2] =
            net.layers.try_into().map_err(|l: Vec<LayerParams>| {
                Error::Parameter(format!("autoencoder needs 2 layers, got {}", l.len()))
            })?;
        AutoencoderParams::new(encoder, decoder)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityConfig {
    /// Desired mean activation of each hidden unit.
    pub target: f64,
    pub weight: f64,
    /// Track mean activations with a running average over batches instead
    /// of a full pass over the training set each epoch.
    #[serde(default)]
    pub running_estimate: bool,
}

impl SparsityConfig {
    pub fn new(target: f64, weight: f64) -> Result<Self> {
        let s = SparsityConfig {
            target,
            weight,
            running_estimate: false,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::Parameter(format!(
                "sparsity target must be in (0, 1), got {}",
                self.target
            )));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::Parameter(format!(
                "sparsity weight must be >= 0, got {}",
                self.weight
            )));
        }
        Ok(())
    }

    /// `weight * sum_j KL(target || mean_j)`.
    pub fn penalty(&self, mean_act: &[f64]) -> f64 {
        self.weight
            * mean_act
                .iter()
                .map(|&q| kl_divergence(self.target, q))
                .sum::<f64>()
    }

    /// Derivative of [`penalty`](Self::penalty) with respect to each mean
    /// activation.
    pub fn gradient(&self, mean_act: &[f64]) -> Vec<f64> {
        let p = self.target;
        mean_act
            .iter()
            .map(|&q| {
                let q = clamp_prob(q);
                self.weight * (-p / q + (1.0 - p) / (1.0 - q))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    #[default]
    None,
    /// Zero each entry with probability `level`.
    Masking,
    /// With probability `level`, replace an entry by 0 or 1 (fair coin).
    SaltPepper,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub level: f64,
}

impl CorruptionSpec {
    pub const NONE: CorruptionSpec = CorruptionSpec {
        kind: CorruptionKind::None,
        level: 0.0,
    };

    pub fn masking(level: f64) -> Self {
        CorruptionSpec {
            kind: CorruptionKind::Masking,
            level,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.level) {
            return Err(Error::Parameter(format!(
                "corruption level must be in [0, 1], got {}",
                self.level
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.kind == CorruptionKind::None || self.level == 0.0
    }
}

fn clamp_prob(q: f64) -> f64 {
    q.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP)
}

/// `KL(p || q) = p ln(p/q) + (1-p) ln((1-p)/(1-q))`, with `q` clamped away
/// from 0 and 1. Terms with a zero coefficient vanish.
pub fn kl_divergence(p: f64, q: f64) -> f64 {
    if p == q {
        return 0.0;
    }
    let q = clamp_prob(q);
    let mut kl = 0.0;
    if p > 0.0 {
        kl += p * (p / q).ln();
    }
    if p < 1.0 {
        kl += (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    }
    kl.max(0.0)
}

/// Mean hidden activation of every unit over the rows of `x`.
pub fn mean_hidden_activation(ae: &AutoencoderParams, x: &Matrix) -> Result<Vec<f64>> {
    if x.rows() == 0 {
        return Err(Error::InvalidShape {
            op: "mean_hidden_activation",
            msg: "no examples".into(),
        });
    }
    Ok(ae.encode(x)?.col_means()?.into_vec())
}

/// Returns a corrupted copy of `x`. Identity corruption draws nothing from
/// `rng`.
pub fn corrupt(x: &Matrix, spec: &CorruptionSpec, rng: &mut (impl Rng + ?Sized)) -> Matrix {
    if spec.is_identity() {
        return x.clone();
    }
    let q = spec.level;
    match spec.kind {
        CorruptionKind::None => x.clone(),
        CorruptionKind::Masking => x.map(|v| if rng.gen::<f64>() < q { 0.0 } else { v }),
        CorruptionKind::SaltPepper => x.map(|v| {
            if rng.gen::<f64>() < q {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    0.0
                }
            } else {
                v
            }
        }),
    }
}

/// Reconstruction loss of a two-layer network plus the sparsity penalty,
/// with mean activations measured on `input` itself.
pub fn reconstruction_loss(
    net: &NetworkParams,
    input: &Matrix,
    target: &Matrix,
    objective: &Objective,
    sparsity: Option<&SparsityConfig>,
) -> Result<f64> {
    let pred = net.predict_proba(input)?;
    let mut l = crate::nn::loss(objective.loss, &pred, target, &objective.reg, net)?;
    if let Some(s) = sparsity {
        let ae = AutoencoderParams::from_network(net.clone())?;
        l += s.penalty(&mean_hidden_activation(&ae, input)?);
    }
    Ok(l)
}

/// Backprop for the reconstruction objective. When `sparsity` is given, its
/// gradient is evaluated at the supplied mean activations and added to each
/// example's hidden-layer error; the returned loss includes the penalty at
/// those activations.
pub fn reconstruction_gradient(
    net: &NetworkParams,
    input: &Matrix,
    target: &Matrix,
    objective: &Objective,
    sparsity: Option<(&SparsityConfig, &[f64])>,
    rng: &mut (impl Rng + ?Sized),
) -> Result<Backprop> {
    let extra = sparsity
        .map(|(s, q)| vec![Some(s.gradient(q))])
        .unwrap_or_default();
    let mut bp = backprop_with(net, input, target, objective, &extra, rng)?;
    if let Some((s, q)) = sparsity {
        bp.loss += s.penalty(q);
    }
    Ok(bp)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AutoencoderOptions {
    pub sparsity: Option<SparsityConfig>,
    pub corruption: CorruptionSpec,
    pub reg: Regularizer,
}

/// Standard deviation of the initial weights of a sigmoid layer,
/// `4 * sqrt(2 / (fan_in + fan_out))`.
pub fn sigmoid_init_sigma(inputs: usize, outputs: usize) -> f64 {
    4.0 * (2.0 / (inputs + outputs) as f64).sqrt()
}

pub fn init_autoencoder(
    visible: usize,
    hidden: usize,
    rng: &mut (impl Rng + ?Sized),
) -> Result<AutoencoderParams> {
    if hidden == 0 || visible == 0 {
        return Err(Error::Parameter(
            "autoencoder layers need at least one unit".into(),
        ));
    }
    let sigma = sigmoid_init_sigma(visible, hidden);
    let encoder = init_layer(visible, hidden, InitScheme::Gaussian { sigma }, rng)?;
    let decoder = init_layer(hidden, visible, InitScheme::Gaussian { sigma }, rng)?;
    AutoencoderParams::new(encoder, decoder)
}

/// Autoencoder trainer driven by [`run_epochs`]; `y` is the clean target.
#[derive(Debug, Clone)]
pub struct AutoencoderTrainer {
    pub net: NetworkParams,
    pub objective: Objective,
    pub options: AutoencoderOptions,
    mean_act: Option<Vec<f64>>,
    velocity: Velocity,
}

impl AutoencoderTrainer {
    pub fn new(ae: &AutoencoderParams, options: AutoencoderOptions) -> Self {
        let net = ae.to_network();
        let velocity = Velocity::zeros_like(&net);
        let objective = Objective {
            loss: LossKind::CrossEntropy,
            reg: options.reg,
            dropout: None,
        };
        AutoencoderTrainer {
            net,
            objective,
            options,
            mean_act: None,
            velocity,
        }
    }

    pub fn params(&self) -> Result<AutoencoderParams> {
        AutoencoderParams::from_network(self.net.clone())
    }

    fn hidden_means(&self, x: &Matrix) -> Result<Vec<f64>> {
        let mut h = self.net.layers[0].affine(x)?;
        h.map_inplace(sigmoid);
        Ok(h.col_means()?.into_vec())
    }
}

impl Trainable for AutoencoderTrainer {
    type Grad = NetworkParams;
    type Snapshot = NetworkParams;

    fn begin_epoch(&mut self, _epoch: usize, x: &Matrix) -> Result<()> {
        if let Some(s) = &self.options.sparsity {
            if !s.running_estimate {
                self.mean_act = Some(self.hidden_means(x)?);
            }
        }
        Ok(())
    }

    fn gradient(
        &mut self,
        x: &Matrix,
        y: &Matrix,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, NetworkParams)> {
        let input = corrupt(x, &self.options.corruption, rng);
        let sparsity = match self.options.sparsity {
            Some(s) if s.running_estimate => {
                let batch = self.hidden_means(&input)?;
                let est = match self.mean_act.take() {
                    None => batch,
                    Some(prev) => prev
                        .iter()
                        .zip(&batch)
                        .map(|(p, b)| {
                            RUNNING_ESTIMATE_DECAY * p + (1.0 - RUNNING_ESTIMATE_DECAY) * b
                        })
                        .collect(),
                };
                self.mean_act = Some(est);
                Some(s)
            }
            other => other,
        };
        let sp = match (&sparsity, &self.mean_act) {
            (Some(s), Some(q)) => Some((s, q.as_slice())),
            _ => None,
        };
        let bp = reconstruction_gradient(&self.net, &input, y, &self.objective, sp, rng)?;
        Ok((bp.loss, bp.grads))
    }

    fn apply_update(&mut self, grad: &NetworkParams, cfg: &OptimizerConfig) -> Result<()> {
        momentum_step(
            &mut self.net,
            grad,
            &mut self.velocity,
            cfg.learning_rate,
            cfg.momentum,
        )
    }

    fn snapshot(&self) -> NetworkParams {
        self.net.clone()
    }

    fn restore(&mut self, snapshot: NetworkParams) {
        self.net = snapshot;
    }
}

fn check_unit_range(x: &Matrix) -> Result<()> {
    if x.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Range("autoencoder inputs must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Initializes and trains an autoencoder with `hidden` units on `x`.
pub fn train_autoencoder(
    x: &Matrix,
    hidden: usize,
    options: &AutoencoderOptions,
    opt: &OptimizerConfig,
    rng: &mut (impl Rng + ?Sized),
) -> Result<(AutoencoderParams, History)> {
    if hidden < 1 {
        return Err(Error::Parameter(
            "autoencoder needs at least one hidden unit".into(),
        ));
    }
    check_unit_range(x)?;
    let ae = init_autoencoder(x.cols(), hidden, rng)?;
    train_autoencoder_from(ae, x, options, opt)
}

/// Trains an already initialized autoencoder.
pub fn train_autoencoder_from(
    ae: AutoencoderParams,
    x: &Matrix,
    options: &AutoencoderOptions,
    opt: &OptimizerConfig,
) -> Result<(AutoencoderParams, History)> {
    check_unit_range(x)?;
    options.corruption.validate()?;
    options.reg.validate()?;
    if let Some(s) = &options.sparsity {
        s.validate()?;
    }
    let mut trainer = AutoencoderTrainer::new(&ae, *options);
    let history = run_epochs(&mut trainer, x, x, opt, None)?;
    Ok((trainer.params()?, history))
}
