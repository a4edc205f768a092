//! Per-turbine thrust estimation from force-torque and RPM channels.
//!
//! Each turbine runs its own 3-state filter over `(T, T', b)`, where `b` is
//! the residual bias of the force-torque sensor along the thrust axis.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::jet::{JetCoefficients, T_MAX};
use crate::model::{JetMount, NUM_JETS};
use crate::ukf::{ukf_predict, ukf_update, GaussianBelief, SigmaParams};

/// Force-torque sample in the nozzle frame of one mount.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtReading {
    /// N
    pub force: Vector3<f64>,
    /// N m
    pub torque: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpmReading {
    /// rev/min
    pub rpm: f64,
}

/// Static map `T = k2 * rpm^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpmMap {
    pub k2: f64,
    pub rpm_max: f64,
}

impl RpmMap {
    /// Calibrated so that `rpm_max` maps to peak thrust.
    pub fn from_rpm_max(rpm_max: f64) -> Self {
        Self { k2: T_MAX / (rpm_max * rpm_max), rpm_max }
    }

    pub fn thrust(&self, rpm: f64) -> f64 {
        (self.k2 * rpm * rpm).clamp(0.0, T_MAX)
    }

    pub fn rpm(&self, thrust: f64) -> f64 {
        (thrust.max(0.0) / self.k2).sqrt().min(self.rpm_max)
    }

    /// Slope `dT/drpm` at a given thrust.
    pub fn slope(&self, thrust: f64) -> f64 {
        2.0 * (self.k2 * thrust.max(0.0)).sqrt()
    }
}

/// Force projected on the mount's thrust axis. Torque is ignored and the
/// sensor bias is left in.
pub fn ft_to_thrust_intensity(reading: &FtReading, mount: &JetMount) -> f64 {
    reading.force.dot(&mount.thrust_axis_local.normalize())
}

pub fn rpm_to_thrust(reading: &RpmReading, map: &RpmMap) -> f64 {
    map.thrust(reading.rpm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrustFilterConfig {
    pub coeffs: JetCoefficients,
    pub rpm_map: RpmMap,
    /// N, force-torque noise along the axis.
    pub ft_std: f64,
    /// rev/min
    pub rpm_std: f64,
    /// Floor on the RPM-derived thrust variance, N^2.
    pub rpm_var_floor: f64,
    /// Process noise std per second for T (N), T' (N/s) and the bias (N).
    pub q_thrust: f64,
    pub q_rate: f64,
    pub q_bias: f64,
    /// Initial std for T, T' and the bias.
    pub p0_thrust: f64,
    pub p0_rate: f64,
    pub p0_bias: f64,
    pub sigma: SigmaParams,
}

impl ThrustFilterConfig {
    pub fn reference() -> Self {
        Self {
            coeffs: JetCoefficients::reference(),
            rpm_map: RpmMap::from_rpm_max(130_000.0),
            ft_std: 2.0,
            rpm_std: 2000.0,
            rpm_var_floor: 1.0,
            q_thrust: 0.5,
            q_rate: 5.0,
            q_bias: 0.05,
            p0_thrust: 10.0,
            p0_rate: 5.0,
            p0_bias: 10.0,
            sigma: SigmaParams::default(),
        }
    }

    /// Discrete process noise for a step of `dt`.
    pub fn process_noise(&self, dt: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(&[
            self.q_thrust.powi(2) * dt,
            self.q_rate.powi(2) * dt,
            self.q_bias.powi(2) * dt,
        ]))
    }

    /// Measurement covariance for `(ft, rpm-derived thrust)` around `thrust`.
    pub fn measurement_noise(&self, thrust: f64) -> DMatrix<f64> {
        let rpm_var = (self.rpm_map.slope(thrust) * self.rpm_std).powi(2).max(self.rpm_var_floor);
        DMatrix::from_diagonal(&DVector::from_row_slice(&[self.ft_std.powi(2), rpm_var]))
    }

    pub fn initial_belief(&self, thrust: f64) -> GaussianBelief {
        GaussianBelief {
            mean: DVector::from_row_slice(&[thrust, 0.0, 0.0]),
            covariance: DMatrix::from_diagonal(&DVector::from_row_slice(&[
                self.p0_thrust.powi(2),
                self.p0_rate.powi(2),
                self.p0_bias.powi(2),
            ])),
        }
    }
}

impl Default for ThrustFilterConfig {
    fn default() -> Self {
        Self::reference()
    }
}

/// Integration step used inside the filter process, s.
const PROCESS_SUBSTEP: f64 = 1e-3;

/// Turbine model without the clamp, so sigma points stay smooth. The bias
/// is a random walk.
pub fn thrust_process(x: &DVector<f64>, u: f64, coeffs: &JetCoefficients, dt: f64) -> DVector<f64> {
    let n = (dt / PROCESS_SUBSTEP).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let (mut t, mut rate) = (x[0], x[1]);
    for _ in 0..n {
        rate += h * coeffs.acceleration(t, rate, u);
        t += h * rate;
    }
    DVector::from_row_slice(&[t, rate, x[2]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThrustStep {
    pub belief: GaussianBelief,
    /// Point estimate, never negative.
    pub thrust: f64,
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
}

impl ThrustStep {
    pub fn nis(&self) -> f64 {
        match self.innovation_cov.clone().cholesky() {
            Some(c) => self.innovation.dot(&c.solve(&self.innovation)),
            None => f64::INFINITY,
        }
    }

    /// Per-channel NIS: `(force-torque, rpm)`.
    pub fn channel_nis(&self) -> [f64; 2] {
        std::array::from_fn(|i| self.innovation[i].powi(2) / self.innovation_cov[(i, i)])
    }
}

/// Predict with the turbine model under throttle `u`, then fuse the axis
/// projection of `ft` and the RPM-derived thrust.
pub fn thrust_estimate_step(
    belief: &GaussianBelief,
    u: f64,
    ft: &FtReading,
    rpm: &RpmReading,
    mount: &JetMount,
    cfg: &ThrustFilterConfig,
    dt: f64,
) -> Result<ThrustStep> {
    if belief.dim() != 3 {
        return Err(domain(format!("thrust belief has dimension {}, expected 3", belief.dim())));
    }
    let prior = ukf_predict(
        belief,
        |x, dt| thrust_process(x, u, &cfg.coeffs, dt),
        &cfg.process_noise(dt),
        dt,
        &cfg.sigma,
    )?;
    let z = DVector::from_row_slice(&[ft_to_thrust_intensity(ft, mount), rpm_to_thrust(rpm, &cfg.rpm_map)]);
    let r = cfg.measurement_noise(prior.mean[0]);
    let out = ukf_update(&prior, &z, |x| DVector::from_row_slice(&[x[0] + x[2], x[0]]), &r, &cfg.sigma)?;
    let thrust = out.belief.mean[0].max(0.0);
    Ok(ThrustStep { belief: out.belief, thrust, innovation: out.innovation, innovation_cov: out.innovation_cov })
}

/// Summary of one turbine filter for telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThrustSummary {
    pub thrust: f64,
    pub bias: f64,
    pub cov_trace: f64,
    pub nis: f64,
}

/// Four independent turbine filters.
#[derive(Debug, Clone, PartialEq)]
pub struct ThrustEstimatorBank {
    pub cfg: ThrustFilterConfig,
    pub mounts: [JetMount; NUM_JETS],
    pub beliefs: [GaussianBelief; NUM_JETS],
    pub last: [ThrustSummary; NUM_JETS],
}

impl ThrustEstimatorBank {
    pub fn new(cfg: ThrustFilterConfig, mounts: &[JetMount], initial_thrust: f64) -> Result<Self> {
        if mounts.len() != NUM_JETS {
            return Err(domain(format!("expected {NUM_JETS} mounts, got {}", mounts.len())));
        }
        let beliefs = std::array::from_fn(|_| cfg.initial_belief(initial_thrust));
        Ok(Self {
            cfg,
            mounts: std::array::from_fn(|i| mounts[i].clone()),
            beliefs,
            last: [ThrustSummary { thrust: initial_thrust, ..Default::default() }; NUM_JETS],
        })
    }

    pub fn step(
        &mut self,
        throttle: &[f64; NUM_JETS],
        ft: &[FtReading; NUM_JETS],
        rpm: &[RpmReading; NUM_JETS],
        dt: f64,
    ) -> Result<[f64; NUM_JETS]> {
        for i in 0..NUM_JETS {
            let s = thrust_estimate_step(&self.beliefs[i], throttle[i], &ft[i], &rpm[i], &self.mounts[i], &self.cfg, dt)?;
            let nis = s.nis();
            self.last[i] = ThrustSummary {
                thrust: s.thrust,
                bias: s.belief.mean[2],
                cov_trace: s.belief.covariance.trace(),
                nis,
            };
            self.beliefs[i] = s.belief;
        }
        Ok(self.thrusts())
    }

    pub fn thrusts(&self) -> [f64; NUM_JETS] {
        std::array::from_fn(|i| self.last[i].thrust)
    }

    /// Estimated thrust rates, N/s.
    pub fn rates(&self) -> [f64; NUM_JETS] {
        std::array::from_fn(|i| self.beliefs[i].mean[1])
    }
}
