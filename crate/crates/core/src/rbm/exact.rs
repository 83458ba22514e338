//! Brute-force enumeration over every configuration of a small RBM.
//!
//! Exponential in the unit count; useful as a ground truth for tests and
//! gradient checks, never for training real models.

use super::{check_binary, RbmParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::sigmoid;

/// Largest `n_visible + n_hidden` the enumerators accept.
pub const ENUMERATION_LIMIT: usize = 24;

fn guard(rbm: &RbmParams) -> Result<()> {
    let n = rbm.n_visible() + rbm.n_hidden();
    if n > ENUMERATION_LIMIT {
        return Err(Error::Capacity {
            what: "RBM enumeration units",
            needed: n,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// Streaming log-sum-exp accumulator.
struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    fn new() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn push(&mut self, x: f64) {
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        self.max + self.sum.ln()
    }
}

fn bits(code: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| ((code >> i) & 1) as f64).collect()
}

/// Visible bias term `a·v` and hidden inputs `b + v W` for one visible vector.
fn visible_terms(rbm: &RbmParams, v: &[f64]) -> (f64, Vec<f64>) {
    let av = rbm.visible_bias.iter().zip(v).map(|(a, x)| a * x).sum();
    let mut c = rbm.hidden_bias.clone();
    for (i, &vi) in v.iter().enumerate() {
        if vi != 0.0 {
            for (cj, w) in c.iter_mut().zip(rbm.weights.row(i)) {
                *cj += vi * w;
            }
        }
    }
    (av, c)
}

/// `log sum_h exp(-E(v, h))`, enumerating every hidden configuration.
fn log_unnormalized(rbm: &RbmParams, v: &[f64]) -> f64 {
    let (av, c) = visible_terms(rbm, v);
    let nh = rbm.n_hidden();
    let mut acc = LogSumExp::new();
    for code in 0..1usize << nh {
        let mut s = av;
        for (j, cj) in c.iter().enumerate() {
            if (code >> j) & 1 == 1 {
                s += cj;
            }
        }
        acc.push(s);
    }
    acc.value()
}

/// `log Z`, summing `exp(-E)` over all `2^(n_v + n_h)` joint configurations.
pub fn exact_log_partition(rbm: &RbmParams) -> Result<f64> {
    guard(rbm)?;
    let nv = rbm.n_visible();
    let nh = rbm.n_hidden();
    let mut acc = LogSumExp::new();
    for vcode in 0..1usize << nv {
        let (av, c) = visible_terms(rbm, &bits(vcode, nv));
        for hcode in 0..1usize << nh {
            let mut s = av;
            for (j, cj) in c.iter().enumerate() {
                if (hcode >> j) & 1 == 1 {
                    s += cj;
                }
            }
            acc.push(s);
        }
    }
    Ok(acc.value())
}

pub fn exact_partition(rbm: &RbmParams) -> Result<f64> {
    Ok(exact_log_partition(rbm)?.exp())
}

fn check_visible(rbm: &RbmParams, v: &[f64]) -> Result<()> {
    if v.len() != rbm.n_visible() {
        return Err(Error::shape(
            "exact_marginal",
            (1, v.len()),
            rbm.weights.shape(),
        ));
    }
    check_binary("v", v)
}

/// `p(v)`, summing over hidden configurations.
pub fn exact_marginal(rbm: &RbmParams, v: &[f64]) -> Result<f64> {
    check_visible(rbm, v)?;
    let log_z = exact_log_partition(rbm)?;
    Ok((log_unnormalized(rbm, v) - log_z).exp())
}

/// `p(v)` for every visible configuration, indexed by the bit pattern of `v`
/// (unit `i` is bit `i`).
pub fn exact_marginals(rbm: &RbmParams) -> Result<Vec<f64>> {
    let log_z = exact_log_partition(rbm)?;
    let nv = rbm.n_visible();
    Ok((0..1usize << nv)
        .map(|code| (log_unnormalized(rbm, &bits(code, nv)) - log_z).exp())
        .collect())
}

/// Mean of `log p(v)` over the rows of `data`.
pub fn exact_loglik(rbm: &RbmParams, data: &Matrix) -> Result<f64> {
    if data.rows() == 0 {
        return Err(Error::Parameter(
            "log-likelihood of an empty data set".into(),
        ));
    }
    let log_z = exact_log_partition(rbm)?;
    let mut total = 0.0;
    for v in data.row_iter() {
        check_visible(rbm, v)?;
        total += log_unnormalized(rbm, v) - log_z;
    }
    Ok(total / data.rows() as f64)
}

/// Gradient of [`exact_loglik`] with respect to every parameter:
/// data expectations minus model expectations, the latter by enumerating
/// all visible configurations.
pub fn exact_gradient(rbm: &RbmParams, data: &Matrix) -> Result<RbmParams> {
    if data.rows() == 0 {
        return Err(Error::Parameter("gradient of an empty data set".into()));
    }
    let log_z = exact_log_partition(rbm)?;
    let nv = rbm.n_visible();
    let nh = rbm.n_hidden();

    // Accumulates weight * (v_i h_j, v_i, h_j) with h_j replaced by its
    // conditional expectation.
    let accumulate = |grad: &mut RbmParams, v: &[f64], weight: f64| {
        let (_, c) = visible_terms(rbm, v);
        let ph: Vec<f64> = c.iter().map(|&x| sigmoid(x)).collect();
        for i in 0..nv {
            if v[i] != 0.0 {
                grad.visible_bias[i] += weight * v[i];
                for (g, p) in grad.weights.row_mut(i).iter_mut().zip(&ph) {
                    *g += weight * v[i] * p;
                }
            }
        }
        for (g, p) in grad.hidden_bias.iter_mut().zip(&ph) {
            *g += weight * p;
        }
    };

    let mut grad = RbmParams::zeros(nv, nh);
    let inv_m = 1.0 / data.rows() as f64;
    for v in data.row_iter() {
        check_visible(rbm, v)?;
        accumulate(&mut grad, v, inv_m);
    }
    for code in 0..1usize << nv {
        let v = bits(code, nv);
        let p = (log_unnormalized(rbm, &v) - log_z).exp();
        accumulate(&mut grad, &v, -p);
    }
    Ok(grad)
}
