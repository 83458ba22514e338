use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::network::{forward, DropoutSpec, NetworkParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Predictions are clamped to `[PRED_CLAMP, 1 - PRED_CLAMP]` inside logs.
pub const PRED_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    /// Categorical `-sum y ln p` after a softmax output, the per-unit binary
    /// form `-[y ln p + (1-y) ln(1-p)]` after any other output.
    CrossEntropy,
}

/// Weight penalties; biases are never penalized.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Regularizer {
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub l1: f64,
}

impl Regularizer {
    pub const NONE: Regularizer = Regularizer { l2: 0.0, l1: 0.0 };

    pub fn l2(lambda: f64) -> Self {
        Regularizer {
            l2: lambda,
            l1: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l1 >= 0.0) {
            return Err(Error::Parameter(format!(
                "regularization weights must be >= 0, got l2={} l1={}",
                self.l2, self.l1
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.l2 == 0.0 && self.l1 == 0.0
    }

    /// `l2 * sum(w^2) + l1 * sum(|w|)` over all weight matrices.
    pub fn penalty(&self, net: &NetworkParams) -> f64 {
        let mut p = 0.0;
        if self.l2 != 0.0 {
            p += self.l2 * net.weights_sum_sq();
        }
        if self.l1 != 0.0 {
            p += self.l1 * net.weights_sum_abs();
        }
        p
    }

    /// Adds `2 l2 w + l1 sign(w)` to a weight gradient, with `sign(0) = 0`.
    pub fn add_gradient(&self, weights: &Matrix, grad: &mut Matrix) {
        if self.is_zero() {
            return;
        }
        let (l2, l1) = (self.l2, self.l1);
        for (g, &w) in grad.as_mut_slice().iter_mut().zip(weights.as_slice()) {
            let sign = if w > 0.0 {
                1.0
            } else if w < 0.0 {
                -1.0
            } else {
                0.0
            };
            *g += 2.0 * l2 * w + l1 * sign;
        }
    }
}

/// Loss, penalties and dropout for one supervised objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub loss: LossKind,
    pub reg: Regularizer,
    pub dropout: Option<DropoutSpec>,
}

impl Objective {
    pub fn new(loss: LossKind) -> Self {
        Objective {
            loss,
            reg: Regularizer::NONE,
            dropout: None,
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP)
}

fn check_pair(kind: LossKind, output: Activation, pred: &Matrix, target: &Matrix) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("loss", pred.shape(), target.shape()));
    }
    if kind == LossKind::SquaredError && output == Activation::Softmax {
        return Err(Error::Unsupported(
            "softmax output requires cross-entropy loss".into(),
        ));
    }
    if kind == LossKind::CrossEntropy
        && target.as_slice().iter().any(|&t| !(0.0..=1.0).contains(&t))
    {
        return Err(Error::Range(
            "cross-entropy targets must lie in [0, 1]".into(),
        ));
    }
    Ok(())
}

/// Data term averaged over the rows of `pred`.
pub fn data_loss(
    kind: LossKind,
    output: Activation,
    pred: &Matrix,
    target: &Matrix,
) -> Result<f64> {
    check_pair(kind, output, pred, target)?;
    let m = pred.rows().max(1) as f64;
    let pairs = pred.as_slice().iter().zip(target.as_slice());
    let total: f64 = match (kind, output) {
        (LossKind::SquaredError, _) => pairs.map(|(&h, &y)| (y - h) * (y - h)).sum(),
        (LossKind::CrossEntropy, Activation::Softmax) => pairs
            .filter(|(_, &y)| y != 0.0)
            .map(|(&h, &y)| -y * clamp_prob(h).ln())
            .sum(),
        (LossKind::CrossEntropy, _) => pairs
            .map(|(&h, &y)| {
                let p = clamp_prob(h);
                let mut l = 0.0;
                if y != 0.0 {
                    l -= y * p.ln();
                }
                if y != 1.0 {
                    l -= (1.0 - y) * (1.0 - p).ln();
                }
                l
            })
            .sum(),
    };
    Ok(total / m)
}

/// Regularized loss of predictions `pred` made by `net`.
pub fn loss(
    kind: LossKind,
    pred: &Matrix,
    target: &Matrix,
    reg: &Regularizer,
    net: &NetworkParams,
) -> Result<f64> {
    let data = data_loss(kind, net.output_activation, pred, target)?;
    if reg.is_zero() {
        return Ok(data);
    }
    Ok(data + reg.penalty(net))
}

/// Per-example derivative of the data term with respect to the output
/// pre-activations (not yet divided by the batch size).
///
/// Softmax and sigmoid outputs under cross-entropy use the fused form
/// `pred - target`.
pub fn output_delta(
    kind: LossKind,
    output: Activation,
    pred: &Matrix,
    target: &Matrix,
) -> Result<Matrix> {
    check_pair(kind, output, pred, target)?;
    match (kind, output) {
        (LossKind::CrossEntropy, Activation::Softmax | Activation::Sigmoid) => pred.sub(target),
        (LossKind::CrossEntropy, act) => pred.zip(target, |a, y| {
            let p = clamp_prob(a);
            (-y / p + (1.0 - y) / (1.0 - p)) * act.derivative_from_output(a)
        }),
        (LossKind::SquaredError, act) => {
            pred.zip(target, |a, y| 2.0 * (a - y) * act.derivative_from_output(a))
        }
    }
}

/// Result of one backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    /// Batch-averaged gradient, shaped like the network.
    pub grads: NetworkParams,
    /// Regularized loss of the forward pass the gradient was taken on.
    pub loss: f64,
    /// Hidden activations of that forward pass, first hidden layer first.
    pub hidden: Vec<Matrix>,
}

/// Gradient of the regularized, batch-averaged loss with respect to every
/// weight and bias.
pub fn backprop(
    net: &NetworkParams,
    x: &Matrix,
    y: &Matrix,
    loss: LossKind,
    reg: &Regularizer,
    dropout: Option<&DropoutSpec>,
    rng: &mut (impl Rng + ?Sized),
) -> Result<NetworkParams> {
    let objective = Objective {
        loss,
        reg: *reg,
        dropout: dropout.copied(),
    };
    Ok(backprop_with(net, x, y, &objective, &[], rng)?.grads)
}

/// Backprop with optional extra terms on hidden activations.
///
/// `hidden_extra[l]`, when present, is added to `dJ/da` of every example at
/// hidden layer `l` (first hidden layer is 0) before the activation
/// derivative is applied. Sparsity penalties enter this way.
pub fn backprop_with(
    net: &NetworkParams,
    x: &Matrix,
    y: &Matrix,
    objective: &Objective,
    hidden_extra: &[Option<Vec<f64>>],
    rng: &mut (impl Rng + ?Sized),
) -> Result<Backprop> {
    let n_layers = net.layers.len();
    if y.rows() != x.rows() {
        return Err(Error::shape("backprop targets", x.shape(), y.shape()));
    }
    let dropout = objective.dropout.filter(|d| !d.is_identity());
    let fp = forward(net, x, dropout.as_ref(), rng)?;
    let pred = fp.output();
    let data = data_loss(objective.loss, net.output_activation, pred, y)?;
    let loss = if objective.reg.is_zero() {
        data
    } else {
        data + objective.reg.penalty(net)
    };

    let m = x.rows() as f64;
    let mut grads = net.zeros_like();
    let mut delta = output_delta(objective.loss, net.output_activation, pred, y)?;
    for l in (0..n_layers).rev() {
        let layer = &net.layers[l];
        let input = fp.layer_input(l);
        let mut gw = delta.transpose().dot(input)?;
        gw.map_inplace(|g| g / m);
        objective.reg.add_gradient(&layer.weights, &mut gw);
        let gb: Vec<f64> = delta.col_sums().into_iter().map(|g| g / m).collect();
        grads.layers[l].weights = gw;
        grads.layers[l].bias = gb;

        if l > 0 {
            let mut d_act = delta.dot(&layer.weights)?;
            if let Some(mask) = &fp.masks[l] {
                d_act.zip_inplace(mask, |d, k| d * k)?;
            }
            if let Some(Some(extra)) = hidden_extra.get(l - 1) {
                d_act.add_row_broadcast(extra)?;
            }
            let act = net.hidden_activation;
            d_act.zip_inplace(&fp.activations[l], |d, a| d * act.derivative_from_output(a))?;
            delta = d_act;
        }
    }
    let hidden = fp.activations[1..n_layers].to_vec();
    Ok(Backprop {
        grads,
        loss,
        hidden,
    })
}
