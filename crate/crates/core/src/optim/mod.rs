//! Gradient-descent training loops and their diagnostics.
//!
//! Batch, stochastic and mini-batch descent all run through [`run_epochs`],
//! which shuffles the rows once per epoch and walks them in contiguous
//! slices. Batch mode is mini-batch with `b = m`, stochastic mode is
//! mini-batch with `b = 1`, so the three agree bit-for-bit wherever they
//! coincide by definition.

mod early_stopping;
mod gradcheck;
mod ratio;
mod trainer;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::params::{check_compatible, Parameters};

pub use early_stopping::{Decision, EarlyStopping, EarlyStoppingConfig};
pub use gradcheck::{finite_diff_gradient, max_relative_error, relative_error};
pub use ratio::{update_ratio_report, RatioFlag, UpdateRatio, RATIO_BAND};
pub use trainer::{train_network, NetworkTrainer};

/// Default mini-batch size.
pub const DEFAULT_BATCH_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Batch,
    Stochastic,
    #[default]
    Minibatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Only read in mini-batch mode.
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Minibatch,
            learning_rate: 1.0,
            momentum: 0.0,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 10,
            shuffle_seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.algorithm == Algorithm::Minibatch && self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be positive".into()));
        }
        Ok(())
    }

    /// Rows per update for a training set of `m` rows.
    pub fn effective_batch(&self, m: usize) -> Result<usize> {
        match self.algorithm {
            Algorithm::Batch => Ok(m),
            Algorithm::Stochastic => Ok(1),
            Algorithm::Minibatch if self.batch_size > m => Err(Error::Parameter(format!(
                "batch size {} exceeds training set size {m}",
                self.batch_size
            ))),
            Algorithm::Minibatch => Ok(self.batch_size),
        }
    }
}

/// Per-parameter velocity for the momentum recurrence, zero at rest.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Velocity(pub Vec<Vec<f64>>);

impl Velocity {
    pub fn zeros_like(params: &impl Parameters) -> Self {
        Velocity(
            params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect(),
        )
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.0
    }
}

/// `velocity <- mu * velocity - lr * grad; params <- params + velocity`.
///
/// With `mu = 0` this is the plain step `params <- params - lr * grad`.
pub fn momentum_step<P: Parameters, G: Parameters>(
    params: &mut P,
    grads: &G,
    velocity: &mut Velocity,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    check_compatible("momentum_step", params, grads)?;
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    if velocity.0.len() != p.len() || velocity.0.iter().zip(&p).any(|(v, t)| v.len() != t.len()) {
        return Err(Error::shape(
            "momentum_step velocity",
            (velocity.0.len(), 0),
            (p.len(), 0),
        ));
    }
    for ((pt, gt), vt) in p.iter_mut().zip(&g).zip(velocity.0.iter_mut()) {
        for ((w, &d), v) in pt.iter_mut().zip(gt.iter()).zip(vt.iter_mut()) {
            *v = momentum * *v - learning_rate * d;
            *w += *v;
        }
    }
    Ok(())
}

/// A model trainable by [`run_epochs`].
pub trait Trainable {
    type Grad;
    type Snapshot: Clone;

    /// Hook run before each epoch (1-based) with the full training inputs.
    fn begin_epoch(&mut self, _epoch: usize, _x: &Matrix) -> Result<()> {
        Ok(())
    }

    /// Loss on the batch before the update, and the update direction.
    fn gradient(
        &mut self,
        x: &Matrix,
        y: &Matrix,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Self::Grad)>;

    fn apply_update(&mut self, grad: &Self::Grad, cfg: &OptimizerConfig) -> Result<()>;

    fn snapshot(&self) -> Self::Snapshot;

    fn restore(&mut self, snapshot: Self::Snapshot);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_error: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned, when early stopping ran.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl History {
    pub fn last_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Validation hook: computes the held-out error of the current model and
/// optionally drives early stopping.
pub struct Validation<'a, T> {
    pub error: Box<dyn FnMut(&T) -> Result<f64> + 'a>,
    pub early_stopping: Option<EarlyStoppingConfig>,
}

/// Stream used for training noise (dropout masks, corruption, Gibbs
/// sampling); stream 0 of the same seed drives shuffling.
pub fn noise_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Runs `cfg.epochs` passes over `(x, y)`.
///
/// Every epoch shuffles the row order with ChaCha8 seeded from
/// `cfg.shuffle_seed` and visits contiguous slices of the shuffled order;
/// the final slice may be short. With early stopping, training halts once
/// the validation error stops improving and the best snapshot is restored.
pub fn run_epochs<T: Trainable>(
    model: &mut T,
    x: &Matrix,
    y: &Matrix,
    cfg: &OptimizerConfig,
    mut validation: Option<Validation<'_, T>>,
) -> Result<History> {
    cfg.validate()?;
    let m = x.rows();
    if m == 0 {
        return Err(Error::Parameter("training set is empty".into()));
    }
    if y.rows() != m {
        return Err(Error::shape("run_epochs", x.shape(), y.shape()));
    }
    let batch = cfg.effective_batch(m)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut noise = noise_rng(cfg.shuffle_seed);
    let mut history = History::default();
    let mut stopper = validation
        .as_ref()
        .and_then(|v| v.early_stopping)
        .map(EarlyStopping::new);
    let mut best: Option<T::Snapshot> = None;
    let mut order: Vec<usize> = (0..m).collect();

    for epoch in 1..=cfg.epochs {
        model.begin_epoch(epoch, x)?;
        order.sort_unstable();
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let (xb, yb) = (x.select_rows(chunk), y.select_rows(chunk));
            let (loss, grad) = model.gradient(&xb, &yb, &mut noise)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            model.apply_update(&grad, cfg)?;
        }
        let mut record = EpochRecord {
            epoch,
            train_loss: loss_sum / m as f64,
            val_error: None,
        };
        let mut stop = false;
        if let Some(v) = validation.as_mut() {
            let err = (v.error)(model)?;
            record.val_error = Some(err);
            if let Some(s) = stopper.as_mut() {
                let decision = s.observe(epoch, err);
                if s.best_epoch() == Some(epoch) {
                    best = Some(model.snapshot());
                }
                stop = decision == Decision::Stop;
            }
        }
        history.epochs.push(record);
        log::debug!(
            "epoch {epoch}: loss {:.6} val {:?}",
            record.train_loss,
            record.val_error
        );
        if stop {
            history.stopped_early = true;
            break;
        }
    }
    if let (Some(s), Some(snap)) = (stopper, best) {
        history.best_epoch = s.best_epoch();
        model.restore(snap);
    }
    Ok(history)
}

/// Rows visited by each epoch of [`run_epochs`] for `m` rows, in order.
/// Exposed for inspection and tests.
pub fn epoch_orders(m: usize, epochs: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..m).collect();
    (0..epochs)
        .map(|_| {
            order.sort_unstable();
            order.shuffle(&mut rng);
            order.clone()
        })
        .collect()
}
