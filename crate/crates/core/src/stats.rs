//! Chi-square bands for filter consistency checks.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Two-sided interval holding `confidence` of a chi-square with `dof`
/// degrees of freedom.
pub fn chi_square_interval(dof: f64, confidence: f64) -> (f64, f64) {
    let dist = ChiSquared::new(dof).expect("dof must be positive");
    let tail = 0.5 * (1.0 - confidence);
    (dist.inverse_cdf(tail), dist.inverse_cdf(1.0 - tail))
}

/// Band for the average of `runs` independent chi-square(`dim`) statistics.
pub fn mean_chi_square_interval(dim: usize, runs: usize, confidence: f64) -> (f64, f64) {
    let (lo, hi) = chi_square_interval((dim * runs) as f64, confidence);
    (lo / runs as f64, hi / runs as f64)
}
