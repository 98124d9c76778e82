//! Per-position multivariate Gaussian baseline scored by Mahalanobis distance,
//! plus the pointwise check relating flow likelihoods to Gaussian targets.

mod checkpoint;
mod identity;

pub use checkpoint::{decode_mvg, encode_mvg, read_mvg, write_mvg, MVG_MAGIC, MVG_VERSION};
pub use identity::{reverse_kl_identity_check, reverse_kl_loss_estimate, IdentityCheck};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::feature_store::FeaturePyramid;
use crate::flow::LOG_2PI;
use crate::scoring::{par_map, Grid};

/// Default diagonal regularization added to every sample covariance.
pub const DEFAULT_RIDGE: f64 = 0.01;

/// A Gaussian held as mean plus lower Cholesky factor of its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    log_det: f64,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension {
                op: "gaussian",
                left: vec![mean.len()],
                right: vec![cov.nrows(), cov.ncols()],
            });
        }
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
        Self::from_factor(mean, chol.l())
    }

    /// Builds from a lower-triangular factor `L` with `Σ = L Lᵀ`.
    pub fn from_factor(mean: DVector<f64>, factor: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if factor.nrows() != d || factor.ncols() != d {
            return Err(Error::Dimension {
                op: "gaussian factor",
                left: vec![d],
                right: vec![factor.nrows(), factor.ncols()],
            });
        }
        let diag = factor.diagonal();
        if diag.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Numeric(
                "covariance factor has a non-positive diagonal".into(),
            ));
        }
        let log_det = 2.0 * diag.iter().map(|v| v.ln()).sum::<f64>();
        Ok(Gaussian {
            mean,
            factor: factor.lower_triangle(),
            log_det,
        })
    }

    pub fn standard(dim: usize) -> Self {
        Gaussian {
            mean: DVector::zeros(dim),
            factor: DMatrix::identity(dim, dim),
            log_det: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    /// `log det Σ`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    fn whiten(&self, z: &[f64]) -> Result<DVector<f64>> {
        if z.len() != self.dim() {
            return Err(Error::Dimension {
                op: "mahalanobis",
                left: vec![z.len()],
                right: vec![self.dim()],
            });
        }
        let diff = DVector::from_column_slice(z) - &self.mean;
        self.factor
            .solve_lower_triangular(&diff)
            .ok_or_else(|| Error::Numeric("singular covariance factor".into()))
    }

    /// Squared Mahalanobis distance `(z−μ)ᵀ Σ⁻¹ (z−μ)`.
    pub fn mahalanobis_sq(&self, z: &[f64]) -> Result<f64> {
        Ok(self.whiten(z)?.norm_squared())
    }

    pub fn mahalanobis(&self, z: &[f64]) -> Result<f64> {
        Ok(self.mahalanobis_sq(z)?.sqrt())
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        let d = self.dim() as f64;
        Ok(-0.5 * (d * LOG_2PI + self.log_det + self.mahalanobis_sq(z)?))
    }

    /// Maps a standard normal draw `u` to `μ + L u`.
    pub fn transform(&self, u: &[f64]) -> DVector<f64> {
        &self.mean + &self.factor * DVector::from_column_slice(u)
    }
}

/// Sample mean and `N−1` covariance with `ridge·I` added.
pub fn fit_gaussian(samples: &[Vec<f64>], ridge: f64) -> Result<Gaussian> {
    if samples.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if !(ridge > 0.0) {
        return Err(Error::Config(format!(
            "ridge must be positive, got {ridge}"
        )));
    }
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = DVector::zeros(d);
    for s in samples {
        if s.len() != d {
            return Err(Error::Dimension {
                op: "fit_gaussian",
                left: vec![d],
                right: vec![s.len()],
            });
        }
        mean += DVector::from_column_slice(s);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let diff = DVector::from_column_slice(s) - &mean;
        cov.ger(1.0, &diff, &diff, 1.0);
    }
    cov /= n - 1.0;
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    Gaussian::new(mean, cov)
}

/// Gaussians for every position of one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MvgScale {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub ridge: f64,
    pub positions: Vec<Gaussian>,
}

impl MvgScale {
    /// Distance grid `M(z_i)` for one feature map.
    pub fn distance_grid(&self, pyramid: &FeaturePyramid, k: usize) -> Result<Grid> {
        let map = pyramid.scales.get(k).ok_or_else(|| {
            Error::Config(format!("pyramid {} has no scale {k}", pyramid.image_id))
        })?;
        if (map.height(), map.width(), map.depth()) != (self.height, self.width, self.dim) {
            return Err(Error::Config(format!(
                "scale {k}: pyramid {} is {}x{}x{}, model was fitted on {}x{}x{}",
                pyramid.image_id,
                map.height(),
                map.width(),
                map.depth(),
                self.height,
                self.width,
                self.dim
            )));
        }
        let values = self
            .positions
            .iter()
            .enumerate()
            .map(|(i, g)| g.mahalanobis(&map.vector_f64(i)))
            .collect::<Result<Vec<_>>>()?;
        Grid::new(self.height, self.width, values)
    }

    /// Bytes of mean and factor storage.
    pub fn parameter_bytes(&self) -> usize {
        mvg_parameter_bytes(self.height, self.width, self.dim)
    }
}

/// Storage for a per-position MVG: `H·W·(D + D(D+1)/2)` doubles.
pub fn mvg_parameter_bytes(height: usize, width: usize, dim: usize) -> usize {
    8 * height * width * (dim + dim * (dim + 1) / 2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvgModel {
    pub scales: Vec<MvgScale>,
}

impl MvgModel {
    pub fn parameter_bytes(&self) -> usize {
        self.scales.iter().map(MvgScale::parameter_bytes).sum()
    }

    /// Per-scale Mahalanobis grids for one image.
    pub fn distance_maps(&self, pyramid: &FeaturePyramid) -> Result<Vec<Grid>> {
        if pyramid.num_scales() != self.scales.len() {
            return Err(Error::Config(format!(
                "pyramid {} has {} scales, model has {}",
                pyramid.image_id,
                pyramid.num_scales(),
                self.scales.len()
            )));
        }
        self.scales
            .iter()
            .enumerate()
            .map(|(k, s)| s.distance_grid(pyramid, k))
            .collect()
    }
}

/// Fits one scale over the training pyramids, positions split across threads.
pub fn fit_mvg_scale(
    train: &[FeaturePyramid],
    k: usize,
    ridge: f64,
    threads: usize,
) -> Result<MvgScale> {
    if train.len() < 2 {
        return Err(Error::Validation(format!(
            "MVG fitting needs at least 2 train images, got {}",
            train.len()
        )));
    }
    let first = train[0]
        .scales
        .get(k)
        .ok_or_else(|| Error::Config(format!("pyramid {} has no scale {k}", train[0].image_id)))?;
    let (h, w, d) = (first.height(), first.width(), first.depth());
    for p in train {
        match p.scales.get(k) {
            Some(m) if (m.height(), m.width(), m.depth()) == (h, w, d) => {}
            _ => {
                return Err(Error::Config(format!(
                    "pyramid {} scale {k} does not match {h}x{w}x{d}",
                    p.image_id
                )))
            }
        }
    }
    let positions: Vec<usize> = (0..h * w).collect();
    let gaussians = par_map(&positions, threads, |&i| {
        let samples: Vec<Vec<f64>> = train.iter().map(|p| p.scales[k].vector_f64(i)).collect();
        fit_gaussian(&samples, ridge).map_err(|e| match e {
            Error::Numeric(msg) => {
                Error::Numeric(format!("scale {k} position ({}, {}): {msg}", i / w, i % w))
            }
            other => other,
        })
    })?;
    Ok(MvgScale {
        height: h,
        width: w,
        dim: d,
        ridge,
        positions: gaussians,
    })
}

pub fn fit_mvg(train: &[FeaturePyramid], ridge: f64, threads: usize) -> Result<MvgModel> {
    let k = train
        .first()
        .map(FeaturePyramid::num_scales)
        .ok_or_else(|| Error::Validation("MVG fitting needs train images".into()))?;
    let scales = (0..k)
        .map(|s| fit_mvg_scale(train, s, ridge, threads))
        .collect::<Result<Vec<_>>>()?;
    Ok(MvgModel { scales })
}

#[cfg(test)]
mod tests;
