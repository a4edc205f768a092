//! Base pose and velocity estimation fusing IMU and VIO samples.
//!
//! The filter keeps a nominal [`BaseState`] and runs the UKF on a 12-dim
//! error `(dp, dtheta, dv, dw)`, with `dtheta` a body-local rotation vector.
//! After every step the error mean is folded back into the nominal.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{numeric, Result};
use crate::math::{canonical, exp_map, log_map};
use crate::model::{JointConfig, RobotModel};
use crate::ukf::{symmetrize, ukf_predict, ukf_update, GaussianBelief, SigmaParams};

pub const ERROR_DIM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseState {
    /// m, world
    pub position: Vector3<f64>,
    /// Base orientation in the world.
    pub orientation: UnitQuaternion<f64>,
    /// m/s, world
    pub lin_velocity: Vector3<f64>,
    /// rad/s, body
    pub ang_velocity: Vector3<f64>,
}

impl Default for BaseState {
    fn default() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            lin_velocity: Vector3::zeros(),
            ang_velocity: Vector3::zeros(),
        }
    }
}

impl BaseState {
    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    /// `self (+) d`
    pub fn retract(&self, d: &DVector<f64>) -> BaseState {
        BaseState {
            position: self.position + d.fixed_rows::<3>(0),
            orientation: canonical(self.orientation * exp_map(&d.fixed_rows::<3>(3).into())),
            lin_velocity: self.lin_velocity + d.fixed_rows::<3>(6),
            ang_velocity: self.ang_velocity + d.fixed_rows::<3>(9),
        }
    }

    /// `self (-) other`, the error that takes `other` to `self`.
    pub fn difference(&self, other: &BaseState) -> DVector<f64> {
        let mut d = DVector::zeros(ERROR_DIM);
        d.fixed_rows_mut::<3>(0).copy_from(&(self.position - other.position));
        d.fixed_rows_mut::<3>(3).copy_from(&log_map(&(other.orientation.inverse() * self.orientation)));
        d.fixed_rows_mut::<3>(6).copy_from(&(self.lin_velocity - other.lin_velocity));
        d.fixed_rows_mut::<3>(9).copy_from(&(self.ang_velocity - other.ang_velocity));
        d
    }

    /// Constant-velocity motion over `dt`.
    pub fn propagate(&self, dt: f64) -> BaseState {
        BaseState {
            position: self.position + self.lin_velocity * dt,
            orientation: canonical(self.orientation * exp_map(&(self.ang_velocity * dt))),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub orientation: UnitQuaternion<f64>,
    /// rad/s, body
    pub ang_velocity: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VioSample {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub lin_velocity: Vector3<f64>,
    /// rad/s, body
    pub ang_velocity: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseFilterConfig {
    /// Process noise std per sqrt(s) for position (m), rotation (rad),
    /// linear velocity (m/s) and angular velocity (rad/s).
    pub q_position: f64,
    pub q_rotation: f64,
    pub q_velocity: f64,
    pub q_ang_velocity: f64,
    pub imu_orientation_std: f64,
    pub imu_gyro_std: f64,
    pub vio_position_std: f64,
    pub vio_orientation_std: f64,
    pub vio_velocity_std: f64,
    pub vio_ang_velocity_std: f64,
    /// Initial std of each block.
    pub p0_position: f64,
    pub p0_rotation: f64,
    pub p0_velocity: f64,
    pub p0_ang_velocity: f64,
    pub sigma: SigmaParams,
}

impl PoseFilterConfig {
    pub fn reference() -> Self {
        Self {
            q_position: 0.001,
            q_rotation: 0.001,
            q_velocity: 0.5,
            q_ang_velocity: 0.5,
            imu_orientation_std: 0.005,
            imu_gyro_std: 0.01,
            vio_position_std: 0.01,
            vio_orientation_std: 0.01,
            vio_velocity_std: 0.02,
            vio_ang_velocity_std: 0.02,
            p0_position: 0.05,
            p0_rotation: 0.05,
            p0_velocity: 0.1,
            p0_ang_velocity: 0.1,
            sigma: SigmaParams::default(),
        }
    }

    fn blocks(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        let mut v = DVector::zeros(ERROR_DIM);
        for (k, s) in [a, b, c, d].into_iter().enumerate() {
            v.fixed_rows_mut::<3>(3 * k).fill(s);
        }
        DMatrix::from_diagonal(&v)
    }

    pub fn process_noise(&self, dt: f64) -> DMatrix<f64> {
        Self::blocks(self.q_position, self.q_rotation, self.q_velocity, self.q_ang_velocity).map(|s| s * s * dt)
    }

    pub fn initial_covariance(&self) -> DMatrix<f64> {
        Self::blocks(self.p0_position, self.p0_rotation, self.p0_velocity, self.p0_ang_velocity).map(|s| s * s)
    }

    pub fn imu_noise(&self) -> DMatrix<f64> {
        let mut v = DVector::zeros(6);
        v.fixed_rows_mut::<3>(0).fill(self.imu_orientation_std.powi(2));
        v.fixed_rows_mut::<3>(3).fill(self.imu_gyro_std.powi(2));
        DMatrix::from_diagonal(&v)
    }

    pub fn vio_noise(&self) -> DMatrix<f64> {
        Self::blocks(
            self.vio_position_std,
            self.vio_orientation_std,
            self.vio_velocity_std,
            self.vio_ang_velocity_std,
        )
        .map(|s| s * s)
    }
}

impl Default for PoseFilterConfig {
    fn default() -> Self {
        Self::reference()
    }
}

/// Nominal state plus the covariance of the (zero-mean) error.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFilter {
    pub nominal: BaseState,
    pub covariance: DMatrix<f64>,
}

impl PoseFilter {
    pub fn new(nominal: BaseState, covariance: DMatrix<f64>) -> Self {
        Self { nominal, covariance }
    }

    fn belief(&self) -> GaussianBelief {
        GaussianBelief { mean: DVector::zeros(ERROR_DIM), covariance: self.covariance.clone() }
    }

    fn inject(nominal: BaseState, b: GaussianBelief) -> Result<Self> {
        let nominal = nominal.retract(&b.mean);
        let drift = (nominal.orientation.quaternion().norm() - 1.0).abs();
        if drift > 1e-6 {
            return Err(numeric(format!("quaternion norm drift {drift:e}")));
        }
        Ok(Self { nominal, covariance: symmetrize(b.covariance) })
    }

    /// Diagonal of the error covariance.
    pub fn std_devs(&self) -> DVector<f64> {
        self.covariance.diagonal().map(f64::sqrt)
    }

    /// NEES of a ground-truth state.
    pub fn nees(&self, truth: &BaseState) -> Result<f64> {
        let e = truth.difference(&self.nominal);
        let c = self.covariance.clone().cholesky().ok_or_else(|| numeric("pose covariance not positive definite"))?;
        Ok(e.dot(&c.solve(&e)))
    }
}

pub fn pose_predict(filter: &PoseFilter, dt: f64, cfg: &PoseFilterConfig) -> Result<PoseFilter> {
    let x0 = filter.nominal;
    let next = x0.propagate(dt);
    let b = ukf_predict(
        &filter.belief(),
        |d, dt| x0.retract(d).propagate(dt).difference(&next),
        &cfg.process_noise(dt),
        dt,
        &cfg.sigma,
    )?;
    PoseFilter::inject(next, b)
}

/// Posterior of a pose update and the NIS of its innovation.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseUpdate {
    pub filter: PoseFilter,
    pub nis: f64,
}

pub fn pose_update_imu(filter: &PoseFilter, sample: &ImuSample, r_imu: &DMatrix<f64>, cfg: &PoseFilterConfig) -> Result<PoseUpdate> {
    let x0 = filter.nominal;
    let mut z = DVector::zeros(6);
    z.fixed_rows_mut::<3>(0).copy_from(&log_map(&(x0.orientation.inverse() * sample.orientation)));
    z.fixed_rows_mut::<3>(3).copy_from(&sample.ang_velocity);
    let out = ukf_update(
        &filter.belief(),
        &z,
        |d| {
            let mut h = DVector::zeros(6);
            h.fixed_rows_mut::<3>(0).copy_from(&d.fixed_rows::<3>(3));
            h.fixed_rows_mut::<3>(3).copy_from(&(x0.ang_velocity + d.fixed_rows::<3>(9)));
            h
        },
        r_imu,
        &cfg.sigma,
    )?;
    Ok(PoseUpdate { nis: out.nis(), filter: PoseFilter::inject(x0, out.belief)? })
}

pub fn pose_update_vio(filter: &PoseFilter, sample: &VioSample, r_vio: &DMatrix<f64>, cfg: &PoseFilterConfig) -> Result<PoseUpdate> {
    let x0 = filter.nominal;
    let measured = BaseState {
        position: sample.position,
        orientation: sample.orientation,
        lin_velocity: sample.lin_velocity,
        ang_velocity: sample.ang_velocity,
    };
    // In the error chart the VIO measurement is the error itself.
    let z = measured.difference(&x0);
    let out = ukf_update(&filter.belief(), &z, |d| d.clone(), r_vio, &cfg.sigma)?;
    Ok(PoseUpdate { nis: out.nis(), filter: PoseFilter::inject(x0, out.belief)? })
}

/// CoM under the constant-offset model. The reduced model ignores `q`.
pub fn estimated_com(base: &BaseState, _q: &JointConfig, model: &RobotModel) -> Vector3<f64> {
    model.com_from_base(&base.isometry())
}

/// A VIO sample with its capture time and the time it becomes available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedVio {
    pub stamp: f64,
    pub arrival: f64,
    pub sample: VioSample,
}

/// Moves a VIO sample forward by `lag` seconds at its own velocities.
pub fn compensate_latency(sample: &VioSample, lag: f64) -> VioSample {
    VioSample {
        position: sample.position + sample.lin_velocity * lag,
        orientation: canonical(sample.orientation * exp_map(&(sample.ang_velocity * lag))),
        ..*sample
    }
}

/// Ticks kept for replaying delayed VIO samples.
const HISTORY_TICKS: usize = 40;

#[derive(Debug, Clone)]
struct TickRecord {
    time: f64,
    imu: Option<ImuSample>,
    filter: PoseFilter,
}

/// 200 Hz fusion loop: one prediction per tick, the IMU sample if present
/// and at most one queued VIO sample.
///
/// A delayed VIO sample is applied at the tick nearest its capture time and
/// the ticks after it are replayed with their IMU samples. Samples older
/// than the history are shifted forward with [`pose_update_vio_delayed`].
#[derive(Debug, Clone)]
pub struct PoseEstimator {
    pub cfg: PoseFilterConfig,
    pub filter: PoseFilter,
    pub dt: f64,
    queue: VecDeque<TimedVio>,
    history: VecDeque<TickRecord>,
    r_imu: DMatrix<f64>,
    r_vio: DMatrix<f64>,
    pub vio_consumed: usize,
    pub last_imu_nis: f64,
    pub last_vio_nis: f64,
}

impl PoseEstimator {
    pub fn new(cfg: PoseFilterConfig, initial: BaseState, dt: f64) -> Self {
        Self {
            filter: PoseFilter::new(initial, cfg.initial_covariance()),
            r_imu: cfg.imu_noise(),
            r_vio: cfg.vio_noise(),
            cfg,
            dt,
            queue: VecDeque::new(),
            history: VecDeque::with_capacity(HISTORY_TICKS + 1),
            vio_consumed: 0,
            last_imu_nis: 0.0,
            last_vio_nis: 0.0,
        }
    }

    pub fn push_vio(&mut self, vio: TimedVio) {
        self.queue.push_back(vio);
    }

    pub fn queued_vio(&self) -> usize {
        self.queue.len()
    }

    fn advance(&self, f: &PoseFilter, imu: Option<&ImuSample>) -> Result<(PoseFilter, Option<f64>)> {
        let mut f = pose_predict(f, self.dt, &self.cfg)?;
        let mut nis = None;
        if let Some(s) = imu {
            let u = pose_update_imu(&f, s, &self.r_imu, &self.cfg)?;
            nis = Some(u.nis);
            f = u.filter;
        }
        Ok((f, nis))
    }

    /// Advances the filter to `now` and returns the fused state.
    pub fn tick(&mut self, now: f64, imu: Option<&ImuSample>) -> Result<BaseState> {
        let (f, nis) = self.advance(&self.filter, imu)?;
        if let Some(n) = nis {
            self.last_imu_nis = n;
        }
        self.filter = f.clone();
        self.history.push_back(TickRecord { time: now, imu: imu.copied(), filter: f });
        if self.history.len() > HISTORY_TICKS {
            self.history.pop_front();
        }
        if self.queue.front().is_some_and(|v| v.arrival <= now + 1e-9) {
            let v = self.queue.pop_front().expect("front checked");
            self.apply_vio(&v, now)?;
            self.vio_consumed += 1;
        }
        Ok(self.filter.nominal)
    }

    fn apply_vio(&mut self, v: &TimedVio, now: f64) -> Result<()> {
        let nearest = self
            .history
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.time - v.stamp).abs().total_cmp(&(b.1.time - v.stamp).abs()))
            .map(|(k, r)| (k, r.time));
        let Some((k, t)) = nearest.filter(|(_, t)| (t - v.stamp).abs() <= self.dt) else {
            let u = pose_update_vio_delayed(&self.filter, &v.sample, now - v.stamp, &self.r_vio, &self.cfg)?;
            self.last_vio_nis = u.nis;
            self.filter = u.filter;
            return Ok(());
        };
        let u = pose_update_vio_delayed(&self.history[k].filter, &v.sample, t - v.stamp, &self.r_vio, &self.cfg)?;
        self.last_vio_nis = u.nis;
        self.history[k].filter = u.filter;
        for j in k + 1..self.history.len() {
            let imu = self.history[j].imu;
            let (f, _) = self.advance(&self.history[j - 1].filter, imu.as_ref())?;
            self.history[j].filter = f;
        }
        self.filter = self.history.back().expect("history is non-empty").filter.clone();
        Ok(())
    }
}

/// VIO update for a sample captured `lag` seconds before the filter time
/// (negative when captured after it). The sample is shifted at its own
/// rates and its covariance grows by the shift noise plus the random walk of
/// the velocities over `|lag|`.
pub fn pose_update_vio_delayed(
    filter: &PoseFilter,
    sample: &VioSample,
    lag: f64,
    r_vio: &DMatrix<f64>,
    cfg: &PoseFilterConfig,
) -> Result<PoseUpdate> {
    let sample = compensate_latency(sample, lag);
    let lag = lag.abs();
    let mut r = r_vio.clone();
    let walk_v = cfg.q_velocity.powi(2);
    let walk_w = cfg.q_ang_velocity.powi(2);
    for i in 0..3 {
        r[(i, i)] += (lag * cfg.vio_velocity_std).powi(2) + walk_v * lag.powi(3) / 3.0;
        r[(3 + i, 3 + i)] += (lag * cfg.vio_ang_velocity_std).powi(2) + walk_w * lag.powi(3) / 3.0;
        r[(6 + i, 6 + i)] += walk_v * lag;
        r[(9 + i, 9 + i)] += walk_w * lag;
    }
    pose_update_vio(filter, &sample, &r, cfg)
}
