use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ExperimentConfig, ModelKind};
use crate::autoencoder::{
    init_autoencoder, mean_hidden_activation, reconstruction_gradient, reconstruction_loss,
};
use crate::data::one_hot;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::nn::{backprop_with, init_network, loss, InitScheme, NetworkParams, Objective};
use crate::optim::{finite_diff_gradient, max_relative_error};
use crate::params::Parameters;

pub const GRADCHECK_EPS: f64 = 1e-4;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

const INPUTS: usize = 4;
const HIDDEN: usize = 3;
const CLASSES: usize = 3;
const CODE: usize = 2;
const ROWS: usize = 5;

/// Worst relative error between backprop and symmetric differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckReport {
    /// Supervised network with the configured activations, loss and penalties.
    pub classifier: f64,
    /// Single autoencoder layer, checked for stacked autoencoder models or
    /// whenever a sparsity target is set.
    pub autoencoder: Option<f64>,
    /// Parameters in the largest checked network.
    pub params: usize,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.classifier.max(self.autoencoder.unwrap_or(0.0))
    }

    pub fn passed(&self) -> bool {
        self.max_error() <= GRADCHECK_TOLERANCE
    }
}

fn numeric_vs_backprop(
    net: &NetworkParams,
    analytic: &NetworkParams,
    mut f: impl FnMut(&NetworkParams) -> Result<f64>,
) -> Result<f64> {
    let mut probe = net.clone();
    let mut failure = None;
    let numeric = finite_diff_gradient(
        |theta| {
            probe.assign_flat(theta).expect("same parameter count");
            f(&probe).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        &net.flatten(),
        GRADCHECK_EPS,
        false,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(max_relative_error(&analytic.flatten(), &numeric?))
}

/// Builds the configured model at toy scale (under 30 parameters per
/// network) from `seed` and compares backprop against finite differences.
/// Dropout is switched off so the objective is deterministic.
pub fn gradcheck(cfg: &ExperimentConfig, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(ROWS, INPUTS, |_, _| rng.gen::<f64>());
    let labels: Vec<usize> = (0..ROWS).map(|_| rng.gen_range(0..CLASSES)).collect();
    let y = one_hot(&labels, CLASSES)?;
    let objective = Objective {
        dropout: None,
        ..cfg.objective()
    };

    let scheme = InitScheme::Gaussian { sigma: 0.5 };
    let mut net = init_network(
        &[INPUTS, HIDDEN, CLASSES],
        cfg.hidden_activation,
        cfg.output_activation,
        scheme,
        &mut rng,
    )?;
    for layer in &mut net.layers {
        layer
            .bias
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    let analytic = backprop_with(&net, &x, &y, &objective, &[], &mut rng)?.grads;
    let classifier = numeric_vs_backprop(&net, &analytic, |n| {
        loss(objective.loss, &n.predict_proba(&x)?, &y, &objective.reg, n)
    })?;
    let mut params = net.num_params();

    let sparsity = cfg.sparsity();
    let autoencoder = if matches!(cfg.model, ModelKind::Sae | ModelKind::Sdae) || sparsity.is_some()
    {
        let ae = init_autoencoder(INPUTS, CODE, &mut rng)?;
        let q = mean_hidden_activation(&ae, &x)?;
        let net = ae.to_network();
        let sp = sparsity.as_ref().map(|s| (s, q.as_slice()));
        let analytic = reconstruction_gradient(&net, &x, &x, &objective, sp, &mut rng)?.grads;
        params = params.max(net.num_params());
        Some(numeric_vs_backprop(&net, &analytic, |n| {
            reconstruction_loss(n, &x, &x, &objective, sparsity.as_ref())
        })?)
    } else {
        None
    };
    Ok(GradcheckReport {
        classifier,
        autoencoder,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn default_mlp_passes() {
        let r = gradcheck(&ExperimentConfig::default(), 7).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.autoencoder.is_none());
        assert!(r.params <= 30);
    }

    #[test]
    fn penalized_autoencoder_passes() {
        let cfg = ExperimentConfig {
            model: ModelKind::Sae,
            output_activation: Activation::Softmax,
            l2: 1e-3,
            l1: 1e-3,
            sparsity_target: Some(0.1),
            sparsity_weight: 3.0,
            ..Default::default()
        };
        let r = gradcheck(&cfg, 11).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.autoencoder.is_some());
        assert!(r.params <= 30);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = init_network(
            &[2, 2],
            Activation::Sigmoid,
            Activation::Sigmoid,
            InitScheme::Gaussian { sigma: 1.0 },
            &mut rng,
        )
        .unwrap();
        let wrong = net.zeros_like();
        let err = numeric_vs_backprop(&net, &wrong, |n| Ok(n.weights_sum_sq())).unwrap();
        assert!(err > 0.5);
    }
}
