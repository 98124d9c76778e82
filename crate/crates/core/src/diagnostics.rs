//! Finite-difference Jacobians and grid quadrature, used as independent
//! checks of analytic flow quantities.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Central-difference Jacobian of `f` at `x` with step `h`.
pub fn numerical_jacobian(
    f: impl Fn(&[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    h: f64,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut work = x.to_vec();
    for j in 0..n {
        work[j] = x[j] + h;
        let up = f(&work)?;
        work[j] = x[j] - h;
        let down = f(&work)?;
        work[j] = x[j];
        if up.len() != n || down.len() != n {
            return Err(Error::Contract("jacobian needs a square map".into()));
        }
        for i in 0..n {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// `log|det J|` of `f` at `x` from a central-difference Jacobian.
pub fn numerical_log_abs_det(
    f: impl Fn(&[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    h: f64,
) -> Result<f64> {
    let det = numerical_jacobian(f, x, h)?.determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(Error::Numeric(format!(
            "numerical jacobian determinant is {det}"
        )));
    }
    Ok(det.abs().ln())
}

/// Midpoint-rule integral of `exp(log_density)` over `[lo, hi]^dim` with
/// `steps` cells per axis (`dim` is 1 or 2).
pub fn grid_integral(
    log_density: impl Fn(&[f64]) -> Result<f64>,
    dim: usize,
    lo: f64,
    hi: f64,
    steps: usize,
) -> Result<f64> {
    let h = (hi - lo) / steps as f64;
    let mid = |i: usize| lo + (i as f64 + 0.5) * h;
    match dim {
        1 => {
            let mut acc = 0.0;
            for i in 0..steps {
                acc += log_density(&[mid(i)])?.exp();
            }
            Ok(acc * h)
        }
        2 => {
            let mut acc = 0.0;
            for i in 0..steps {
                for j in 0..steps {
                    acc += log_density(&[mid(i), mid(j)])?.exp();
                }
            }
            Ok(acc * h * h)
        }
        _ => Err(Error::Contract(format!(
            "grid quadrature supports dim 1 or 2, got {dim}"
        ))),
    }
}
