//! Binary restricted Boltzmann machines.
//!
//! Energy `E(v, h) = -a·v - b·h - v·W·h` over binary visible units `v`
//! and hidden units `h`. Training uses contrastive divergence; tiny models
//! can be enumerated exactly (see [`exact`]).

pub mod exact;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{gaussian_matrix, sigmoid};
use crate::optim::{run_epochs, History, OptimizerConfig, Trainable};
use crate::params::Parameters;

pub use exact::{
    exact_gradient, exact_log_partition, exact_loglik, exact_marginal, exact_marginals,
    exact_partition, ENUMERATION_LIMIT,
};

/// Standard deviation of the initial weights.
pub const INIT_WEIGHT_STD: f64 = 0.01;
/// Visible activation rates are clamped to `[c, 1 - c]` before the logit.
pub const VISIBLE_RATE_CLAMP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmParams {
    /// `n_visible x n_hidden`.
    pub weights: Matrix,
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
}

impl RbmParams {
    pub fn new(weights: Matrix, visible_bias: Vec<f64>, hidden_bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != visible_bias.len() || weights.cols() != hidden_bias.len() {
            return Err(Error::shape(
                "RbmParams::new",
                weights.shape(),
                (visible_bias.len(), hidden_bias.len()),
            ));
        }
        Ok(RbmParams {
            weights,
            visible_bias,
            hidden_bias,
        })
    }

    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        RbmParams {
            weights: Matrix::zeros(n_visible, n_hidden),
            visible_bias: vec![0.0; n_visible],
            hidden_bias: vec![0.0; n_hidden],
        }
    }

    pub fn n_visible(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.cols()
    }

    /// The same machine with the roles of the two layers swapped.
    pub fn transposed(&self) -> RbmParams {
        RbmParams {
            weights: self.weights.transpose(),
            visible_bias: self.hidden_bias.clone(),
            hidden_bias: self.visible_bias.clone(),
        }
    }
}

impl Parameters for RbmParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.weights.as_slice(),
            &self.visible_bias,
            &self.hidden_bias,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weights.as_mut_slice(),
            &mut self.visible_bias,
            &mut self.hidden_bias,
        ]
    }
}

fn check_binary(name: &str, x: &[f64]) -> Result<()> {
    if x.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Range(format!("{name} must be binary (0 or 1)")));
    }
    Ok(())
}

/// `E(v, h) = -a·v - b·h - v·(W h)` for binary `v` and `h`.
pub fn energy(rbm: &RbmParams, v: &[f64], h: &[f64]) -> Result<f64> {
    if v.len() != rbm.n_visible() || h.len() != rbm.n_hidden() {
        return Err(Error::shape(
            "energy",
            rbm.weights.shape(),
            (v.len(), h.len()),
        ));
    }
    check_binary("v", v)?;
    check_binary("h", h)?;
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let wh: Vec<f64> = rbm.weights.row_iter().map(|row| dot(row, h)).collect();
    Ok(-dot(&rbm.visible_bias, v) - dot(&rbm.hidden_bias, h) - dot(v, &wh))
}

/// `p(h_j = 1 | v) = sigma(b_j + sum_i v_i w_ij)` for each row of `v`.
pub fn hidden_probs(rbm: &RbmParams, v: &Matrix) -> Result<Matrix> {
    if v.cols() != rbm.n_visible() {
        return Err(Error::shape("hidden_probs", v.shape(), rbm.weights.shape()));
    }
    let mut z = v.dot(&rbm.weights)?;
    z.add_row_broadcast(&rbm.hidden_bias)?;
    z.map_inplace(sigmoid);
    Ok(z)
}

/// `p(v_i = 1 | h) = sigma(a_i + sum_j h_j w_ij)` for each row of `h`.
pub fn visible_probs(rbm: &RbmParams, h: &Matrix) -> Result<Matrix> {
    if h.cols() != rbm.n_hidden() {
        return Err(Error::shape(
            "visible_probs",
            h.shape(),
            rbm.weights.shape(),
        ));
    }
    let mut z = h.dot(&rbm.weights.transpose())?;
    z.add_row_broadcast(&rbm.visible_bias)?;
    z.map_inplace(sigmoid);
    Ok(z)
}

/// Independent Bernoulli draws: entry is 1 with the given probability.
pub fn sample_bernoulli(probs: &Matrix, rng: &mut (impl Rng + ?Sized)) -> Result<Matrix> {
    if let Some(p) = probs.as_slice().iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Parameter(format!("probability {p} outside [0, 1]")));
    }
    Ok(probs.map(|p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdConfig {
    /// Gibbs steps per update.
    pub k: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// L2 decay on the weights only.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Sample binary visible reconstructions instead of using probabilities.
    #[serde(default)]
    pub binary_reconstruction: bool,
    /// Use sampled hidden states instead of probabilities in the data
    /// statistics.
    #[serde(default)]
    pub sample_data_hidden: bool,
}

impl Default for CdConfig {
    fn default() -> Self {
        CdConfig {
            k: 1,
            learning_rate: 1.0,
            momentum: 0.0,
            weight_decay: 0.0,
            epochs: 10,
            batch_size: 100,
            seed: 0,
            binary_reconstruction: false,
            sample_data_hidden: false,
        }
    }
}

impl CdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Parameter("CD needs at least one Gibbs step".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Parameter(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            algorithm: crate::optim::Algorithm::Minibatch,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            shuffle_seed: self.seed,
        }
    }
}

/// Batch-averaged positive-minus-negative statistics from one CD-k chain.
#[derive(Debug, Clone, PartialEq)]
pub struct CdStatistics {
    pub weights: Matrix,
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    /// Mean squared difference between the data and its final reconstruction.
    pub reconstruction_error: f64,
}

/// Runs `k` alternating Gibbs steps from `v0` and returns the statistics.
///
/// Hidden states driving the chain are sampled binary. Reconstructions are
/// probabilities unless `binary_reconstruction` is set. The final hidden
/// statistics always use probabilities.
pub fn cd_statistics(
    rbm: &RbmParams,
    v0: &Matrix,
    cfg: &CdConfig,
    rng: &mut (impl Rng + ?Sized),
) -> Result<CdStatistics> {
    cfg.validate()?;
    let ph0 = hidden_probs(rbm, v0)?;
    let h0 = sample_bernoulli(&ph0, rng)?;
    let mut h = h0.clone();
    let mut recon = Matrix::zeros(0, 0);
    let mut recon_probs = Matrix::zeros(0, 0);
    let mut ph = Matrix::zeros(0, 0);
    for step in 1..=cfg.k {
        recon_probs = visible_probs(rbm, &h)?;
        recon = if cfg.binary_reconstruction {
            sample_bernoulli(&recon_probs, rng)?
        } else {
            recon_probs.clone()
        };
        ph = hidden_probs(rbm, &recon)?;
        if step < cfg.k {
            h = sample_bernoulli(&ph, rng)?;
        }
    }
    let m = v0.rows() as f64;
    let data_hidden = if cfg.sample_data_hidden { &h0 } else { &ph0 };
    let pos = v0.transpose().dot(data_hidden)?;
    let neg = recon.transpose().dot(&ph)?;
    let weights = pos.zip(&neg, |p, n| (p - n) / m)?;
    let mean_diff = |x: &Matrix, y: &Matrix| -> Vec<f64> {
        x.col_sums()
            .into_iter()
            .zip(y.col_sums())
            .map(|(p, n)| (p - n) / m)
            .collect()
    };
    let visible_bias = mean_diff(v0, &recon);
    let hidden_bias = mean_diff(data_hidden, &ph);
    let diff = v0.sub(&recon_probs)?;
    let reconstruction_error = diff.sum_sq() / (v0.rows() * v0.cols()).max(1) as f64;
    Ok(CdStatistics {
        weights,
        visible_bias,
        hidden_bias,
        reconstruction_error,
    })
}

/// Applies CD statistics: weights get momentum and decay,
/// `vel <- mu vel + lr (dW - decay W); W += vel`; biases take a plain step.
pub fn apply_cd(
    rbm: &mut RbmParams,
    stats: &CdStatistics,
    velocity: &mut Matrix,
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if velocity.shape() != rbm.weights.shape() || stats.weights.shape() != rbm.weights.shape() {
        return Err(Error::shape(
            "apply_cd",
            rbm.weights.shape(),
            velocity.shape(),
        ));
    }
    let w = rbm.weights.as_mut_slice();
    for ((wi, vi), &g) in w
        .iter_mut()
        .zip(velocity.as_mut_slice())
        .zip(stats.weights.as_slice())
    {
        *vi = momentum * *vi + learning_rate * (g - weight_decay * *wi);
        *wi += *vi;
    }
    for (a, &g) in rbm.visible_bias.iter_mut().zip(&stats.visible_bias) {
        *a += learning_rate * g;
    }
    for (b, &g) in rbm.hidden_bias.iter_mut().zip(&stats.hidden_bias) {
        *b += learning_rate * g;
    }
    Ok(())
}

/// One contrastive-divergence update on a batch; returns the
/// reconstruction error measured before the update.
pub fn cd_update(
    rbm: &mut RbmParams,
    v_batch: &Matrix,
    cfg: &CdConfig,
    velocity: &mut Matrix,
    rng: &mut (impl Rng + ?Sized),
) -> Result<f64> {
    let stats = cd_statistics(rbm, v_batch, cfg, rng)?;
    apply_cd(
        rbm,
        &stats,
        velocity,
        cfg.learning_rate,
        cfg.momentum,
        cfg.weight_decay,
    )?;
    Ok(stats.reconstruction_error)
}

/// Weights from `N(0, 0.01^2)`, zero hidden biases, and visible biases set to
/// the logit of each unit's mean activation in `train_data`.
pub fn init_rbm(
    n_visible: usize,
    n_hidden: usize,
    train_data: &Matrix,
    rng: &mut (impl Rng + ?Sized),
) -> Result<RbmParams> {
    if train_data.rows() == 0 {
        return Err(Error::Parameter(
            "cannot initialise an RBM from an empty data set".into(),
        ));
    }
    if train_data.cols() != n_visible {
        return Err(Error::shape(
            "init_rbm",
            train_data.shape(),
            (n_visible, n_hidden),
        ));
    }
    if train_data
        .as_slice()
        .iter()
        .any(|x| !(0.0..=1.0).contains(x))
    {
        return Err(Error::Range("RBM training data must lie in [0, 1]".into()));
    }
    let means = train_data.col_means()?;
    let visible_bias = means
        .as_slice()
        .iter()
        .map(|&p| {
            let p = p.clamp(VISIBLE_RATE_CLAMP, 1.0 - VISIBLE_RATE_CLAMP);
            (p / (1.0 - p)).ln()
        })
        .collect();
    Ok(RbmParams {
        weights: gaussian_matrix(n_visible, n_hidden, INIT_WEIGHT_STD, rng),
        visible_bias,
        hidden_bias: vec![0.0; n_hidden],
    })
}

/// Contrastive-divergence trainer driven by [`run_epochs`].
#[derive(Debug, Clone)]
pub struct RbmTrainer {
    pub rbm: RbmParams,
    pub cfg: CdConfig,
    velocity: Matrix,
}

impl RbmTrainer {
    pub fn new(rbm: RbmParams, cfg: CdConfig) -> Self {
        let velocity = Matrix::zeros(rbm.n_visible(), rbm.n_hidden());
        RbmTrainer { rbm, cfg, velocity }
    }
}

impl Trainable for RbmTrainer {
    type Grad = CdStatistics;
    type Snapshot = RbmParams;

    fn gradient(
        &mut self,
        x: &Matrix,
        _y: &Matrix,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, CdStatistics)> {
        let stats = cd_statistics(&self.rbm, x, &self.cfg, rng)?;
        Ok((stats.reconstruction_error, stats))
    }

    fn apply_update(&mut self, grad: &CdStatistics, cfg: &OptimizerConfig) -> Result<()> {
        apply_cd(
            &mut self.rbm,
            grad,
            &mut self.velocity,
            cfg.learning_rate,
            cfg.momentum,
            self.cfg.weight_decay,
        )
    }

    fn snapshot(&self) -> RbmParams {
        self.rbm.clone()
    }

    fn restore(&mut self, snapshot: RbmParams) {
        self.rbm = snapshot;
    }
}

/// Initializes an RBM from `data` and trains it with CD-k. The history's
/// training loss is the per-epoch reconstruction error.
pub fn train_rbm(
    data: &Matrix,
    n_hidden: usize,
    cfg: &CdConfig,
    rng: &mut (impl Rng + ?Sized),
) -> Result<(RbmParams, History)> {
    cfg.validate()?;
    if cfg.learning_rate <= 0.0 {
        return Err(Error::Parameter(
            "RBM training needs a positive learning rate".into(),
        ));
    }
    let rbm = init_rbm(data.cols(), n_hidden, data, rng)?;
    let mut trainer = RbmTrainer::new(rbm, cfg.clone());
    let history = run_epochs(&mut trainer, data, data, &cfg.optimizer(), None)?;
    Ok((trainer.rbm, history))
}
