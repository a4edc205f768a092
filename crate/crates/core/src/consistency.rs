//! Monte Carlo consistency studies for the thrust and pose filters.
//!
//! The ground truth follows each filter's own process model and noise, and
//! the sensors use the filter's assumed measurement noise, so a consistent
//! filter must land its average NEES/NIS inside the chi-square bands.

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::math::{canonical, exp_map};
use crate::model::RobotModel;
use crate::parallel::{map_indexed, ExecPolicy};
use crate::pose::{BaseState, ImuSample, PoseEstimator, PoseFilterConfig, TimedVio, VioSample, ERROR_DIM};
use crate::stats::mean_chi_square_interval;
use crate::thrust::{thrust_estimate_step, thrust_process, FtReading, RpmReading, ThrustFilterConfig};
use crate::ukf::nees;

pub const CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct Statistic {
    pub name: String,
    pub dim: usize,
    pub mean: f64,
    pub band: (f64, f64),
}

impl Statistic {
    fn new(name: &str, dim: usize, values: &[f64]) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Self { name: name.into(), dim, mean, band: mean_chi_square_interval(dim, values.len(), CONFIDENCE) }
    }

    pub fn inside(&self) -> bool {
        self.mean > self.band.0 && self.mean < self.band.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub runs: usize,
    /// Final-time NEES followed by per-channel NIS.
    pub statistics: Vec<Statistic>,
    /// Fraction of (tick, component) pairs outside the 3-sigma envelope.
    pub envelope_exceedance: Option<f64>,
}

impl ConsistencyReport {
    pub fn passes(&self) -> bool {
        self.statistics.iter().all(Statistic::inside) && self.envelope_exceedance.is_none_or(|f| f < 0.02)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn noise3(rng: &mut ChaCha8Rng, std: f64) -> Vector3<f64> {
    Vector3::new(normal(rng), normal(rng), normal(rng)) * std
}

fn throttle_profile(t: f64) -> f64 {
    match (t / 1.5) as usize % 4 {
        0 => 35.0,
        1 => 65.0,
        2 => 45.0,
        _ => 55.0,
    }
}

/// Final-time NEES and per-channel NIS `(ft, rpm)` of one thrust run.
pub fn thrust_run(cfg: &ThrustFilterConfig, model: &RobotModel, seed: u64, steps: usize) -> Result<(f64, [f64; 2])> {
    let dt = 0.01;
    let mount = &model.jets[0];
    let axis = mount.thrust_axis_local.into_inner();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b0 = cfg.initial_belief(60.0);
    let q = cfg.process_noise(dt);
    let mut x = DVector::from_fn(3, |i, _| b0.covariance[(i, i)].sqrt() * normal(&mut rng)) + &b0.mean;
    let mut b = b0;
    let mut nis = [0.0; 2];
    for k in 0..steps {
        let u = throttle_profile(k as f64 * dt);
        x = thrust_process(&x, u, &cfg.coeffs, dt) + DVector::from_fn(3, |i, _| q[(i, i)].sqrt() * normal(&mut rng));
        let ft = FtReading { force: axis * (x[0] + x[2]) + noise3(&mut rng, cfg.ft_std), torque: Vector3::zeros() };
        let rpm = RpmReading { rpm: (cfg.rpm_map.rpm(x[0]) + cfg.rpm_std * normal(&mut rng)).max(0.0) };
        let s = thrust_estimate_step(&b, u, &ft, &rpm, mount, cfg, dt)?;
        nis = s.channel_nis();
        b = s.belief;
    }
    Ok((nees(&b, &x)?, nis))
}

pub fn thrust_consistency(runs: usize, seed: u64, policy: ExecPolicy) -> Result<ConsistencyReport> {
    let cfg = ThrustFilterConfig::reference();
    let model = RobotModel::reference();
    let out = map_indexed(runs, policy, |i| thrust_run(&cfg, &model, seed + i as u64, 500))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let pick = |f: fn(&(f64, [f64; 2])) -> f64| out.iter().map(f).collect::<Vec<_>>();
    Ok(ConsistencyReport {
        runs,
        statistics: vec![
            Statistic::new("thrust NEES", 3, &pick(|o| o.0)),
            Statistic::new("force-torque NIS", 1, &pick(|o| o.1[0])),
            Statistic::new("rpm NIS", 1, &pick(|o| o.1[1])),
        ],
        envelope_exceedance: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRun {
    pub nees: f64,
    pub imu_nis: f64,
    pub vio_nis: f64,
    pub exceed: usize,
    pub checked: usize,
}

fn imu_sample(truth: &BaseState, cfg: &PoseFilterConfig, rng: &mut ChaCha8Rng) -> ImuSample {
    ImuSample {
        orientation: canonical(truth.orientation * exp_map(&noise3(rng, cfg.imu_orientation_std))),
        ang_velocity: truth.ang_velocity + noise3(rng, cfg.imu_gyro_std),
    }
}

fn vio_sample(truth: &BaseState, cfg: &PoseFilterConfig, rng: &mut ChaCha8Rng) -> VioSample {
    VioSample {
        position: truth.position + noise3(rng, cfg.vio_position_std),
        orientation: canonical(truth.orientation * exp_map(&noise3(rng, cfg.vio_orientation_std))),
        lin_velocity: truth.lin_velocity + noise3(rng, cfg.vio_velocity_std),
        ang_velocity: truth.ang_velocity + noise3(rng, cfg.vio_ang_velocity_std),
    }
}

/// One pose run at 200 Hz with 30 Hz VIO delayed by `latency`.
pub fn pose_run(cfg: &PoseFilterConfig, seed: u64, duration: f64, latency: f64) -> Result<PoseRun> {
    let dt = 0.005;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = BaseState {
        position: Vector3::new(0.0, 0.0, 1.0),
        lin_velocity: Vector3::new(0.2, -0.1, 0.05),
        ang_velocity: Vector3::new(0.0, 0.0, 0.2),
        ..Default::default()
    };
    let p0 = cfg.initial_covariance();
    let mut truth = start.retract(&DVector::from_fn(ERROR_DIM, |i, _| p0[(i, i)].sqrt() * normal(&mut rng)));
    let mut est = PoseEstimator::new(*cfg, start, dt);
    let q = cfg.process_noise(dt);
    let ticks = (duration / dt).round() as usize;
    let (mut exceed, mut checked) = (0, 0);
    for k in 1..=ticks {
        let now = k as f64 * dt;
        truth = truth.propagate(dt).retract(&DVector::from_fn(ERROR_DIM, |i, _| q[(i, i)].sqrt() * normal(&mut rng)));
        // 30 Hz capture on the 1 kHz grid.
        if (30 * k * 5) / 1000 != (30 * (k - 1) * 5) / 1000 {
            est.push_vio(TimedVio { stamp: now, arrival: now + latency, sample: vio_sample(&truth, cfg, &mut rng) });
        }
        let imu = imu_sample(&truth, cfg, &mut rng);
        est.tick(now, Some(&imu))?;
        let e = truth.difference(&est.filter.nominal);
        let sd = est.filter.std_devs();
        checked += ERROR_DIM;
        exceed += (0..ERROR_DIM).filter(|&i| e[i].abs() > 3.0 * sd[i]).count();
    }
    Ok(PoseRun { nees: est.filter.nees(&truth)?, imu_nis: est.last_imu_nis, vio_nis: est.last_vio_nis, exceed, checked })
}

pub fn pose_consistency(runs: usize, seed: u64, policy: ExecPolicy) -> Result<ConsistencyReport> {
    let cfg = PoseFilterConfig::reference();
    let out = map_indexed(runs, policy, |i| pose_run(&cfg, seed + i as u64, 5.0, 0.02))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let pick = |f: fn(&PoseRun) -> f64| out.iter().map(f).collect::<Vec<_>>();
    let exceed: usize = out.iter().map(|r| r.exceed).sum();
    let checked: usize = out.iter().map(|r| r.checked).sum();
    Ok(ConsistencyReport {
        runs,
        statistics: vec![
            Statistic::new("pose NEES", ERROR_DIM, &pick(|r| r.nees)),
            Statistic::new("IMU NIS", 6, &pick(|r| r.imu_nis)),
            Statistic::new("VIO NIS", ERROR_DIM, &pick(|r| r.vio_nis)),
        ],
        envelope_exceedance: Some(exceed as f64 / checked as f64),
    })
}
