//! Fixed-step floating-base simulation with turbines, foot contact and
//! noisy sensor synthesis.
//!
//! The base is a single rigid body whose CoM sits at the constant offset of
//! the robot model. Joints follow their references through a first-order
//! lag and carry no inertia of their own.

use nalgebra::{UnitQuaternion, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, numeric, Result};
use crate::jet::{jet_step, JetState};
use crate::math::{canonical, exp_map};
use crate::model::{allocation_matrix, JointConfig, RobotModel, NUM_JETS};
use crate::pose::{BaseState, ImuSample, TimedVio, VioSample};
use crate::thrust::{FtReading, RpmMap, RpmReading};

pub const SIM_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactParams {
    /// N/m per contact point
    pub stiffness: f64,
    /// N s/m per contact point, normal direction
    pub damping: f64,
    /// N s/m per contact point, tangential viscous friction
    pub tangential_damping: f64,
    pub friction: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { stiffness: 5e4, damping: 1000.0, tangential_damping: 400.0, friction: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub contact: ContactParams,
    /// s, first-order joint servo
    pub joint_time_constant: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self { contact: ContactParams::default(), joint_time_constant: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub base: BaseState,
    pub jets: [JetState; NUM_JETS],
    pub q: JointConfig,
    /// s
    pub time: f64,
    /// 1 ms steps taken.
    pub tick: u64,
    /// Net contact force per foot, world, N.
    pub contact_forces: [Vector3<f64>; 2],
    /// Turbines spinning; when false the thrust state is held at zero.
    pub engines_on: bool,
}

impl WorldState {
    /// Robot standing on both feet with the contact springs at rest
    /// compression, engines idle.
    pub fn standing(model: &RobotModel, params: &SimParams) -> Self {
        let lowest = model.feet.iter().flat_map(|f| f.contact_points.iter()).map(|p| p.z).fold(f64::INFINITY, f64::min);
        let n_points = model.feet.iter().map(|f| f.contact_points.len()).sum::<usize>() as f64;
        let sink = model.weight() / (n_points * params.contact.stiffness);
        let base = BaseState { position: Vector3::new(0.0, 0.0, -lowest - sink), ..Default::default() };
        let idle = JetState::new(model.turbine.idle_thrust, 0.0);
        Self {
            base,
            jets: [idle; NUM_JETS],
            q: JointConfig::zero(),
            time: 0.0,
            tick: 0,
            contact_forces: [Vector3::zeros(); 2],
            engines_on: true,
        }
    }

    pub fn com(&self, model: &RobotModel) -> Vector3<f64> {
        model.com_from_base(&self.base.isometry())
    }

    /// CoM velocity, world.
    pub fn com_velocity(&self, model: &RobotModel) -> Vector3<f64> {
        let r = self.base.orientation;
        self.base.lin_velocity + r * self.base.ang_velocity.cross(&model.com_offset)
    }

    pub fn thrusts(&self) -> Vector4<f64> {
        Vector4::from_fn(|i, _| self.jets[i].thrust)
    }

    pub fn is_finite(&self) -> bool {
        let b = &self.base;
        b.position.iter().chain(b.lin_velocity.iter()).chain(b.ang_velocity.iter()).all(|v| v.is_finite())
            && b.orientation.coords.iter().all(|v| v.is_finite())
            && self.jets.iter().all(JetState::is_finite)
            && self.q.angles.iter().all(|v| v.is_finite())
    }

    /// Linear and angular momentum about the CoM, world.
    pub fn momentum(&self, model: &RobotModel) -> (Vector3<f64>, Vector3<f64>) {
        let r = self.base.orientation;
        let omega_w = r * self.base.ang_velocity;
        let inertia = r.to_rotation_matrix().matrix() * model.inertia_body * r.to_rotation_matrix().matrix().transpose();
        (self.com_velocity(model) * model.mass, inertia * omega_w)
    }

    /// Kinetic plus potential energy, J.
    pub fn mechanical_energy(&self, model: &RobotModel) -> f64 {
        let (p, l) = self.momentum(model);
        let omega_w = self.base.orientation * self.base.ang_velocity;
        0.5 * p.norm_squared() / model.mass + 0.5 * l.dot(&omega_w) + model.weight() * self.com(model).z
    }
}

/// Spring-damper normal force with Coulomb-capped viscous friction. Ground
/// is the plane z = 0. `velocity` is the contact point velocity, world.
pub fn contact_force(depth: f64, velocity: &Vector3<f64>, p: &ContactParams) -> Vector3<f64> {
    if depth <= 0.0 {
        return Vector3::zeros();
    }
    let normal = (p.stiffness * depth - p.damping * velocity.z).max(0.0);
    let vt = Vector3::new(velocity.x, velocity.y, 0.0);
    let mut ft = -vt * p.tangential_damping;
    let cap = p.friction * normal;
    if ft.norm() > cap {
        ft *= cap / ft.norm();
    }
    Vector3::new(ft.x, ft.y, normal)
}

/// Normal force only, as a function of depth and depth rate.
pub fn normal_contact_force(depth: f64, depth_rate: f64, k: f64, d: f64) -> f64 {
    if depth <= 0.0 {
        0.0
    } else {
        (k * depth + d * depth_rate).max(0.0)
    }
}

/// Advances the world by `dt` under the given throttles and joint reference.
pub fn world_step(
    w: &WorldState,
    throttle: &Vector4<f64>,
    joint_ref: &Vector4<f64>,
    model: &RobotModel,
    params: &SimParams,
    dt: f64,
) -> Result<WorldState> {
    if !(dt > 0.0) {
        return Err(domain("simulation step must be positive"));
    }
    let mut next = *w;
    for i in 0..NUM_JETS {
        next.jets[i] = if w.engines_on { jet_step(w.jets[i], throttle[i], &model.turbine, dt)? } else { JetState::new(0.0, 0.0) };
    }
    let blend = 1.0 - (-dt / params.joint_time_constant).exp();
    let target = model.joint_limits.clamp(joint_ref);
    next.q = JointConfig::new(model.joint_limits.clamp(&(w.q.angles + (target - w.q.angles) * blend)));

    let iso = w.base.isometry();
    let rot = w.base.orientation;
    let rmat = *rot.to_rotation_matrix().matrix();
    let com = w.com(model);
    let v_com = w.com_velocity(model);
    let omega_w = rot * w.base.ang_velocity;

    // Turbines at the start-of-step thrust.
    let alloc = allocation_matrix(model, &w.q, &iso, &com)?;
    let jets = alloc.wrench(&w.thrusts());
    let mut force = jets.fixed_rows::<3>(0).into_owned() - Vector3::new(0.0, 0.0, model.weight());
    let mut torque = jets.fixed_rows::<3>(3).into_owned();
    for (f, foot) in model.feet.iter().enumerate() {
        let mut sum = Vector3::zeros();
        for p in &foot.contact_points {
            let pw = iso * nalgebra::Point3::from(*p);
            let vel = w.base.lin_velocity + omega_w.cross(&(pw.coords - w.base.position));
            let fc = contact_force(-pw.z, &vel, &params.contact);
            sum += fc;
            torque += (pw.coords - com).cross(&fc);
        }
        force += sum;
        next.contact_forces[f] = sum;
    }

    // Translation: velocity first, position by the trapezoid.
    let v_next = v_com + force * (dt / model.mass);
    let com_next = com + (v_com + v_next) * (0.5 * dt);
    // Rotation: angular momentum update, then the exponential map.
    let inertia = rmat * model.inertia_body * rmat.transpose();
    let l_next = inertia * omega_w + torque * dt;
    let omega_next = rmat * model.inertia_body_inv() * rmat.transpose() * l_next;
    let rot_next = canonical(UnitQuaternion::new_normalize((exp_map(&(omega_next * dt)) * rot).into_inner()));

    let offset = rot_next * model.com_offset;
    next.base = BaseState {
        position: com_next - offset,
        orientation: rot_next,
        lin_velocity: v_next - omega_next.cross(&offset),
        ang_velocity: rot_next.inverse() * omega_next,
    };
    next.time = w.time + dt;
    next.tick = w.tick + 1;
    if !next.is_finite() {
        return Err(numeric(format!("simulation state became non-finite at t = {:.3} s", next.time)));
    }
    Ok(next)
}

/// True iff either foot pushes on the ground with more than 1 N.
pub fn ground_contact_flag(w: &WorldState) -> bool {
    w.contact_forces.iter().any(|f| f.z > GROUND_CONTACT_THRESHOLD)
}

pub const GROUND_CONTACT_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// N, per force component
    pub ft_force_std: f64,
    /// N along each nozzle axis
    pub ft_bias: [f64; NUM_JETS],
    /// rad
    pub imu_orientation_std: f64,
    /// rad/s
    pub imu_gyro_std: f64,
    /// m
    pub vio_position_std: f64,
    /// rad
    pub vio_orientation_std: f64,
    /// m/s
    pub vio_velocity_std: f64,
    /// rad/s
    pub vio_ang_velocity_std: f64,
    /// rev/min
    pub rpm_std: f64,
    /// s, VIO capture-to-arrival delay
    pub vio_latency: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            ft_force_std: 2.0,
            ft_bias: [0.0; NUM_JETS],
            imu_orientation_std: 0.005,
            imu_gyro_std: 0.01,
            vio_position_std: 0.01,
            vio_orientation_std: 0.01,
            vio_velocity_std: 0.02,
            vio_ang_velocity_std: 0.02,
            rpm_std: 2000.0,
            vio_latency: 0.02,
            seed: 1,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            ft_force_std: 0.0,
            imu_orientation_std: 0.0,
            imu_gyro_std: 0.0,
            vio_position_std: 0.0,
            vio_orientation_std: 0.0,
            vio_velocity_std: 0.0,
            vio_ang_velocity_std: 0.0,
            rpm_std: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [
            self.ft_force_std,
            self.imu_orientation_std,
            self.imu_gyro_std,
            self.vio_position_std,
            self.vio_orientation_std,
            self.vio_velocity_std,
            self.vio_ang_velocity_std,
            self.rpm_std,
            self.vio_latency,
        ];
        if stds.iter().any(|s| !(*s >= 0.0)) {
            return Err(domain("noise stds and latency must be non-negative"));
        }
        if self.ft_bias.iter().any(|b| !b.is_finite()) {
            return Err(domain("force-torque bias must be finite"));
        }
        Ok(())
    }
}

/// Sensor periods on the 1 ms tick grid.
pub const FT_PERIOD_TICKS: u64 = 10;
pub const IMU_PERIOD_TICKS: u64 = 5;
pub const VIO_RATE_HZ: u64 = 30;

pub fn ft_due(tick: u64) -> bool {
    tick % FT_PERIOD_TICKS == 0
}

pub fn imu_due(tick: u64) -> bool {
    tick % IMU_PERIOD_TICKS == 0
}

/// 30 Hz on the 1 kHz grid: due whenever `floor(30 n / 1000)` increments.
pub fn vio_due(tick: u64) -> bool {
    tick > 0 && (VIO_RATE_HZ * tick) / 1000 != (VIO_RATE_HZ * (tick - 1)) / 1000
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorBatch {
    pub ft: Option<[FtReading; NUM_JETS]>,
    pub rpm: Option<[RpmReading; NUM_JETS]>,
    pub imu: Option<ImuSample>,
    pub vio: Option<TimedVio>,
}

/// Seeded sensor source. Draws happen only for sensors that are due, in a
/// fixed order, so a seed fixes every batch.
#[derive(Debug, Clone)]
pub struct SensorSuite {
    pub noise: NoiseConfig,
    pub rpm_map: RpmMap,
    rng: ChaCha8Rng,
}

impl SensorSuite {
    pub fn new(noise: NoiseConfig, model: &RobotModel) -> Result<Self> {
        noise.validate()?;
        Ok(Self { rng: ChaCha8Rng::seed_from_u64(noise.seed), rpm_map: RpmMap::from_rpm_max(model.rpm_max), noise })
    }

    fn gauss(&mut self, std: f64) -> f64 {
        let n: f64 = StandardNormal.sample(&mut self.rng);
        n * std
    }

    fn gauss3(&mut self, std: f64) -> Vector3<f64> {
        Vector3::new(self.gauss(std), self.gauss(std), self.gauss(std))
    }

    /// Readings due at `w.tick`.
    pub fn sample(&mut self, w: &WorldState, model: &RobotModel) -> SensorBatch {
        let mut batch = SensorBatch::default();
        if ft_due(w.tick) {
            let nz = self.noise;
            batch.ft = Some(std::array::from_fn(|i| {
                let axis = model.jets[i].thrust_axis_local.into_inner();
                FtReading { force: axis * (w.jets[i].thrust + nz.ft_bias[i]) + self.gauss3(nz.ft_force_std), torque: Vector3::zeros() }
            }));
            batch.rpm = Some(std::array::from_fn(|i| RpmReading {
                rpm: (self.rpm_map.rpm(w.jets[i].thrust) + self.gauss(nz.rpm_std)).max(0.0),
            }));
        }
        if imu_due(w.tick) {
            let s = self.noise;
            batch.imu = Some(ImuSample {
                orientation: canonical(w.base.orientation * exp_map(&self.gauss3(s.imu_orientation_std))),
                ang_velocity: w.base.ang_velocity + self.gauss3(s.imu_gyro_std),
            });
        }
        if vio_due(w.tick) {
            let s = self.noise;
            let sample = VioSample {
                position: w.base.position + self.gauss3(s.vio_position_std),
                orientation: canonical(w.base.orientation * exp_map(&self.gauss3(s.vio_orientation_std))),
                lin_velocity: w.base.lin_velocity + self.gauss3(s.vio_velocity_std),
                ang_velocity: w.base.ang_velocity + self.gauss3(s.vio_ang_velocity_std),
            };
            batch.vio = Some(TimedVio { stamp: w.time, arrival: w.time + s.vio_latency, sample });
        }
        batch
    }
}

/// Free-standing form of [`SensorSuite::sample`] for one-off use.
pub fn sample_sensors(w: &WorldState, suite: &mut SensorSuite, model: &RobotModel) -> SensorBatch {
    suite.sample(w, model)
}
