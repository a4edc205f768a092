//! Closed-form linear Kalman filter, used as the reference the unscented
//! filter must reproduce on linear models.

use nalgebra::{DMatrix, DVector};

use crate::error::{numeric, Result};
use crate::ukf::{symmetrize, GaussianBelief};

pub fn kf_predict(b: &GaussianBelief, f: &DMatrix<f64>, q: &DMatrix<f64>) -> GaussianBelief {
    GaussianBelief {
        mean: f * &b.mean,
        covariance: symmetrize(f * &b.covariance * f.transpose() + q),
    }
}

/// Returns the posterior and the innovation.
pub fn kf_update(
    b: &GaussianBelief,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(GaussianBelief, DVector<f64>)> {
    let s = symmetrize(h * &b.covariance * h.transpose() + r);
    let chol = s.clone().cholesky().ok_or_else(|| numeric("innovation covariance is not positive definite"))?;
    let gain = chol.solve(&(h * &b.covariance)).transpose();
    let innovation = z - h * &b.mean;
    let mean = &b.mean + &gain * &innovation;
    let covariance = symmetrize(&b.covariance - &gain * s * gain.transpose());
    Ok((GaussianBelief { mean, covariance }, innovation))
}
