use crate::error::{Error, Result};

/// Denominator floor for [`relative_error`]; keeps near-zero gradients from
/// turning rounding noise into huge ratios.
const REL_FLOOR: f64 = 1e-6;

/// Numerical gradient of `f` at `theta`.
///
/// The symmetric form `(f(θ+εe_i) - f(θ-εe_i)) / 2ε` is the default;
/// `one_sided` switches to `(f(θ+εe_i) - f(θ)) / ε`.
pub fn finite_diff_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    eps: f64,
    one_sided: bool,
) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!(
            "finite-difference step must be > 0, got {eps}"
        )));
    }
    let mut point = theta.to_vec();
    let base = if one_sided {
        checked(f(&point), usize::MAX)?
    } else {
        0.0
    };
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let plus = checked(f(&point), i)?;
        let g = if one_sided {
            (plus - base) / eps
        } else {
            point[i] = orig - eps;
            let minus = checked(f(&point), i)?;
            (plus - minus) / (2.0 * eps)
        };
        point[i] = orig;
        grad.push(g);
    }
    Ok(grad)
}

fn checked(v: f64, i: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else if i == usize::MAX {
        Err(Error::Numeric(
            "objective is non-finite at the base point".into(),
        ))
    } else {
        Err(Error::Numeric(format!(
            "objective is non-finite when perturbing parameter {i}"
        )))
    }
}

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_on_square() {
        for eps in [0.5, 0.25, 1.0 / 1024.0] {
            let g = finite_diff_gradient(|t| t[0] * t[0], &[3.0], eps, false).unwrap();
            assert_eq!(g, vec![6.0]);
        }
        let g = finite_diff_gradient(|t| t[0] * t[0], &[3.0], 1e-4, false).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_diff_gradient(|_| 4.2, &[1.0, -2.0, 3.0], 1e-4, false).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn one_sided_variant() {
        let g = finite_diff_gradient(|t| 3.0 * t[0], &[2.0], 0.5, true).unwrap();
        assert_eq!(g, vec![3.0]);
        // Forward differences carry an O(eps) bias on curved functions.
        let g = finite_diff_gradient(|t| t[0] * t[0], &[3.0], 0.5, true).unwrap();
        assert_eq!(g, vec![6.5]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(finite_diff_gradient(|t| t[0], &[1.0], 0.0, false).is_err());
        let err = finite_diff_gradient(|t| t[0].ln(), &[0.5], 0.5, false);
        assert!(matches!(err, Err(Error::Numeric(_))));
    }

    proptest! {
        #[test]
        fn symmetric_differences_exact_on_quadratics(
            a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0,
            x in -3.0f64..3.0, y in -3.0f64..3.0, k in -2.0f64..2.0,
        ) {
            let f = |t: &[f64]| a * t[0] * t[0] + b * t[0] * t[1] + c * t[1] * t[1] + k * t[0] + 1.0;
            let g = finite_diff_gradient(f, &[x, y], 1e-3, false).unwrap();
            let exact = [2.0 * a * x + b * y + k, b * x + 2.0 * c * y];
            for (n, e) in g.iter().zip(exact) {
                prop_assert!((n - e).abs() <= 1e-8 * (1.0 + e.abs()), "{} vs {}", n, e);
            }
        }
    }
}
