use nalgebra::DMatrix;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::Gaussian;
use crate::error::{Error, Result};
use crate::flow::{FlowScale, LOG_2PI};

/// Both sides of the pointwise relation between a flow density and a
/// Gaussian target:
///
/// `log p̂(z|c) − log p(z) = (M²(z) − ‖u‖²)/2 + log|det J| + ½·log det Σ`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// `lhs` subtracts the two log-densities; `rhs` assembles the distance terms
/// from the latent, the Jacobian and an LU determinant of `Σ`.
pub fn reverse_kl_identity_check(
    flow: &FlowScale,
    target: &Gaussian,
    z: &[f64],
    cond: &[f64],
) -> Result<IdentityCheck> {
    if target.dim() != flow.dim() {
        return Err(Error::Dimension {
            op: "identity check",
            left: vec![flow.dim()],
            right: vec![target.dim()],
        });
    }
    let lhs = flow.log_likelihood(z, cond)? - target.log_density(z)?;

    let (u, log_det_j) = flow.inverse(z, cond)?;
    let e_sq: f64 = u.iter().map(|v| v * v).sum();
    let cov: DMatrix<f64> = target.covariance();
    let precision = cov
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("target covariance is singular".into()))?;
    let diff = nalgebra::DVector::from_column_slice(z) - target.mean();
    let m_sq = (diff.transpose() * &precision * &diff)[(0, 0)];
    let det = cov.lu().determinant();
    if !(det > 0.0) {
        return Err(Error::Numeric(format!(
            "target covariance determinant {det} is not positive"
        )));
    }
    // log(|det J| / det Σ^{-1/2}) = log|det J| + ½ log det Σ
    let rhs = 0.5 * (m_sq - e_sq) + log_det_j + 0.5 * det.ln();
    Ok(IdentityCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

/// Monte-Carlo estimate of `E_{z∼p̂}[log p̂(z|c) − log p(z)]`, drawing
/// `z` by pushing standard normal latents through the flow.
pub fn reverse_kl_loss_estimate(
    flow: &FlowScale,
    target: &Gaussian,
    cond: &[f64],
    samples: usize,
    rng: &mut impl RngCore,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    let d = flow.dim();
    let mut total = 0.0;
    for _ in 0..samples {
        let u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let (z, log_det_fwd) = flow.forward(&u, cond)?;
        let e_sq: f64 = u.iter().map(|v| v * v).sum();
        let log_p_hat = -0.5 * (e_sq + d as f64 * LOG_2PI) - log_det_fwd;
        total += log_p_hat - target.log_density(&z)?;
    }
    Ok(total / samples as f64)
}
