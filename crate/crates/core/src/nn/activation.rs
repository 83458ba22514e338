use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Unit nonlinearity. `Softmax` normalizes each row and is only valid on the
/// output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Softmax,
    Relu,
    Softplus,
    Linear,
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
            Activation::Linear => "linear",
        };
        f.write_str(s)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `x`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows(z: &mut Matrix) {
    let cols = z.cols();
    if cols == 0 {
        return;
    }
    for row in z.as_mut_slice().chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

impl Activation {
    /// Applies the activation in place to a matrix of pre-activations.
    pub fn apply_inplace(self, z: &mut Matrix) {
        match self {
            Activation::Sigmoid => z.map_inplace(sigmoid),
            Activation::Softmax => softmax_rows(z),
            Activation::Relu => z.map_inplace(|x| x.max(0.0)),
            Activation::Softplus => z.map_inplace(softplus),
            Activation::Linear => {}
        }
    }

    /// Derivative expressed through the activation output `a`.
    ///
    /// Relu's indicator uses `a > 0`, which equals `z > 0`; softplus uses
    /// `sigma(z) = 1 - e^{-a}`.
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => -(-a).exp_m1(),
            Activation::Linear => 1.0,
            Activation::Softmax => f64::NAN,
        }
    }
}

pub fn activate(kind: Activation, z: &Matrix) -> Matrix {
    let mut out = z.clone();
    kind.apply_inplace(&mut out);
    out
}

/// Elementwise derivative of `kind` given its output `a`.
///
/// Softmax has no elementwise derivative; it is only ever used fused with
/// cross-entropy.
pub fn activate_derivative(kind: Activation, a: &Matrix) -> Result<Matrix> {
    if kind == Activation::Softmax {
        return Err(Error::Unsupported(
            "standalone softmax derivative; softmax is only supported fused with cross-entropy"
                .into(),
        ));
    }
    Ok(a.map(|x| kind.derivative_from_output(x)))
}
