//! Additive-noise unscented Kalman filter over flat vectors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, numeric, Error, Result};

/// Smallest eigenvalue kept when a covariance has to be repaired.
pub const PSD_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianBelief {
    /// Symmetrizes the covariance and repairs it if an eigenvalue is below
    /// `-PSD_FLOOR`.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(domain(format!(
                "covariance is {}x{} for a state of dimension {n}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(numeric("belief contains non-finite values"));
        }
        let mut covariance = symmetrize(covariance);
        if min_eigenvalue(&covariance) < -PSD_FLOOR {
            covariance = repair_psd(&covariance);
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaParams {
    pub alpha_s: f64,
    pub beta_s: f64,
    pub kappa_s: f64,
}

impl Default for SigmaParams {
    fn default() -> Self {
        Self { alpha_s: 0.1, beta_s: 2.0, kappa_s: 0.0 }
    }
}

impl SigmaParams {
    pub fn lambda(&self, n: usize) -> f64 {
        self.alpha_s * self.alpha_s * (n as f64 + self.kappa_s) - n as f64
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha_s > 0.0 && self.alpha_s <= 1.0) {
            return Err(domain(format!("alpha_s {} outside (0, 1]", self.alpha_s)));
        }
        if !(n as f64 + self.lambda(n) > 0.0) {
            return Err(domain("n + lambda must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPoints {
    pub points: Vec<DVector<f64>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().min()
}

/// Eigenvalue clipping: negative and tiny eigenvalues are raised to
/// `PSD_FLOOR`.
pub fn repair_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m.clone()).symmetric_eigen();
    let clipped = eig.eigenvalues.map(|l| l.max(PSD_FLOOR));
    let v = &eig.eigenvectors;
    symmetrize(v * DMatrix::from_diagonal(&clipped) * v.transpose())
}

fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c.l());
    }
    repair_psd(m)
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| numeric("Cholesky failed after PSD repair"))
}

pub fn sigma_points(belief: &GaussianBelief, params: &SigmaParams) -> Result<SigmaPoints> {
    let n = belief.dim();
    params.validate(n)?;
    let lambda = params.lambda(n);
    let scale = (n as f64 + lambda).sqrt();
    let l = cholesky_lower(&belief.covariance)? * scale;

    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(belief.mean.clone());
    for j in 0..n {
        points.push(&belief.mean + l.column(j));
    }
    for j in 0..n {
        points.push(&belief.mean - l.column(j));
    }

    let w0 = lambda / (n as f64 + lambda);
    let wi = 0.5 / (n as f64 + lambda);
    let mut mean_weights = vec![wi; 2 * n + 1];
    let mut cov_weights = mean_weights.clone();
    mean_weights[0] = w0;
    cov_weights[0] = w0 + 1.0 - params.alpha_s * params.alpha_s + params.beta_s;
    Ok(SigmaPoints { points, mean_weights, cov_weights })
}

fn weighted_mean(points: &[DVector<f64>], weights: &[f64]) -> DVector<f64> {
    let mut m = DVector::zeros(points[0].len());
    for (p, w) in points.iter().zip(weights) {
        m.axpy(*w, p, 1.0);
    }
    m
}

fn cross_covariance(
    a: &[DVector<f64>],
    a_mean: &DVector<f64>,
    b: &[DVector<f64>],
    b_mean: &DVector<f64>,
    weights: &[f64],
) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(a_mean.len(), b_mean.len());
    for ((x, y), w) in a.iter().zip(b).zip(weights) {
        let dx = x - a_mean;
        let dy = y - b_mean;
        c.ger(*w, &dx, &dy, 1.0);
    }
    c
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(domain(format!("{what} is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
    }
    Ok(())
}

/// Unscented transform of `process` plus additive `q_noise`.
pub fn ukf_predict<F>(
    belief: &GaussianBelief,
    process: F,
    q_noise: &DMatrix<f64>,
    dt: f64,
    params: &SigmaParams,
) -> Result<GaussianBelief>
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64>,
{
    let n = belief.dim();
    if !(dt > 0.0) {
        return Err(domain(format!("dt {dt} must be positive")));
    }
    check_square(q_noise, n, "process noise")?;
    let sp = sigma_points(belief, params)?;
    let mut propagated = Vec::with_capacity(sp.points.len());
    for (index, x) in sp.points.iter().enumerate() {
        let y = process(x, dt);
        if y.len() != n {
            return Err(domain(format!("process returned dimension {} for state dimension {n}", y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSigma { index });
        }
        propagated.push(y);
    }
    let mean = weighted_mean(&propagated, &sp.mean_weights);
    let cov = cross_covariance(&propagated, &mean, &propagated, &mean, &sp.cov_weights) + q_noise;
    Ok(GaussianBelief { mean, covariance: symmetrize(cov) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub belief: GaussianBelief,
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
}

impl UpdateOutcome {
    /// Normalized innovation squared.
    pub fn nis(&self) -> f64 {
        match self.innovation_cov.clone().cholesky() {
            Some(c) => self.innovation.dot(&c.solve(&self.innovation)),
            None => f64::INFINITY,
        }
    }
}

pub fn ukf_update<H>(
    belief: &GaussianBelief,
    measurement: &DVector<f64>,
    h: H,
    r_noise: &DMatrix<f64>,
    params: &SigmaParams,
) -> Result<UpdateOutcome>
where
    H: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = measurement.len();
    check_square(r_noise, m, "measurement noise")?;
    let sp = sigma_points(belief, params)?;
    let mut predicted = Vec::with_capacity(sp.points.len());
    for (index, x) in sp.points.iter().enumerate() {
        let z = h(x);
        if z.len() != m {
            return Err(domain(format!("measurement model returned dimension {}, expected {m}", z.len())));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSigma { index });
        }
        predicted.push(z);
    }
    let z_mean = weighted_mean(&predicted, &sp.mean_weights);
    let s = symmetrize(cross_covariance(&predicted, &z_mean, &predicted, &z_mean, &sp.cov_weights) + r_noise);
    let pxz = cross_covariance(&sp.points, &belief.mean, &predicted, &z_mean, &sp.cov_weights);
    let chol = s.clone().cholesky().ok_or_else(|| numeric("innovation covariance is not positive definite"))?;
    // K = Pxz S^-1, computed as (S^-1 Pxz^T)^T.
    let gain = chol.solve(&pxz.transpose()).transpose();
    let innovation = measurement - &z_mean;
    let mean = &belief.mean + &gain * &innovation;
    let covariance = symmetrize(&belief.covariance - &gain * &s * gain.transpose());
    Ok(UpdateOutcome { belief: GaussianBelief { mean, covariance }, innovation, innovation_cov: s })
}

/// Normalized estimation error squared of `truth` under `belief`.
pub fn nees(belief: &GaussianBelief, truth: &DVector<f64>) -> Result<f64> {
    let e = truth - &belief.mean;
    let c = belief
        .covariance
        .clone()
        .cholesky()
        .ok_or_else(|| numeric("covariance is not positive definite"))?;
    Ok(e.dot(&c.solve(&e)))
}
