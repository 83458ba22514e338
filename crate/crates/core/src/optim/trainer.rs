use rand_chacha::ChaCha8Rng;

use super::{momentum_step, run_epochs, History, OptimizerConfig, Trainable, Validation, Velocity};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::nn::{backprop_with, NetworkParams, Objective};

/// Supervised backprop training of a feed-forward network.
#[derive(Debug, Clone)]
pub struct NetworkTrainer {
    pub net: NetworkParams,
    pub objective: Objective,
    velocity: Velocity,
}

impl NetworkTrainer {
    pub fn new(net: NetworkParams, objective: Objective) -> Self {
        let velocity = Velocity::zeros_like(&net);
        NetworkTrainer {
            net,
            objective,
            velocity,
        }
    }

    pub fn into_net(self) -> NetworkParams {
        self.net
    }
}

impl Trainable for NetworkTrainer {
    type Grad = NetworkParams;
    type Snapshot = NetworkParams;

    fn gradient(
        &mut self,
        x: &Matrix,
        y: &Matrix,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, NetworkParams)> {
        let bp = backprop_with(&self.net, x, y, &self.objective, &[], rng)?;
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

/// Trains `net` on `(x, y)` and returns the final (or best-validation)
/// parameters with the per-epoch history.
pub fn train_network(
    net: NetworkParams,
    x: &Matrix,
    y: &Matrix,
    objective: Objective,
    cfg: &OptimizerConfig,
    validation: Option<Validation<'_, NetworkTrainer>>,
) -> Result<(NetworkParams, History)> {
    objective.reg.validate()?;
    let mut trainer = NetworkTrainer::new(net, objective);
    let history = run_epochs(&mut trainer, x, y, cfg, validation)?;
    Ok((trainer.into_net(), history))
}
