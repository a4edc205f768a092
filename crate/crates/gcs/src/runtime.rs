//! Multi-rate flight loop on the simulated clock.
//!
//! Every 1 ms tick runs, in order: due operator commands, the 10 Hz control
//! step (schedule then MPC) on every 100th tick, joint reference
//! interpolation, one simulator step, and the sensor consumers (thrust bank
//! at 100 Hz, pose filter at 200 Hz with VIO as it arrives).

use std::collections::VecDeque;

use jetstack_core::jet::JetState;
use jetstack_core::math::{quaternion_to_euler, wrap_angle};
use jetstack_core::model::{CentroidalState, RobotModel};
use jetstack_core::mpc::{
    advance_schedule, interpolate_joint_reference, mpc_step, FlightPhase, MpcAction, MpcController, MpcDiagnostics, MpcEstimate,
    MpcState, ReferenceTrajectory, TakeoffSchedule,
};
use jetstack_core::pose::{PoseEstimator, PoseFilterConfig};
use jetstack_core::qp::{QpSettings, QpSolver};
use jetstack_core::sim::{ground_contact_flag, world_step, SensorSuite, WorldState, SIM_DT};
use jetstack_core::thrust::{ThrustEstimatorBank, ThrustFilterConfig};
use jetstack_core::Error;
use nalgebra::{Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::config::{Scenario, ScenarioConfig, ScheduledEvent};
use crate::protocol::{CommandAck, CommandKind, JetFrame, OperatorCommand, TelemetryFrame, TELEMETRY_SCHEMA};

pub const MPC_PERIOD_TICKS: u64 = 100;
pub const THRUST_PERIOD_TICKS: u64 = 10;
pub const POSE_PERIOD_TICKS: u64 = 5;
const MPC_DT: f64 = MPC_PERIOD_TICKS as f64 * SIM_DT;
/// Control ticks from the start of a shutdown until the throttle is zero.
const SHUTDOWN_RAMP_TICKS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RateCounters {
    pub ticks: u64,
    /// Control boundaries at which a throttle command was applied.
    pub throttle_updates: u64,
    /// Ticks on which the applied throttle differed from the previous tick
    /// without being a control boundary. Always zero.
    pub off_boundary_throttle_changes: u64,
    pub joint_reference_updates: u64,
    pub pose_updates: u64,
    pub thrust_updates: u64,
    pub mpc_solves: u64,
    pub stale_estimates: u64,
}

#[derive(Debug, Clone, Default)]
struct Mean3 {
    sum: [f64; 3],
    n: u64,
}

impl Mean3 {
    fn add(&mut self, v: [f64; 3]) {
        for i in 0..3 {
            self.sum[i] += v[i].abs();
        }
        self.n += 1;
    }

    fn get(&self) -> [f64; 3] {
        if self.n == 0 {
            return [0.0; 3];
        }
        self.sum.map(|s| s / self.n as f64)
    }
}

#[derive(Debug, Clone, Default)]
struct FlightStats {
    com_z0: f64,
    peak_altitude: f64,
    max_thrust: f64,
    liftoff_time: Option<f64>,
    flight_time: f64,
    max_attitude_error: f64,
    traversal_position: Mean3,
    traversal_orientation: Mean3,
    flight_position: Mean3,
    flight_orientation: Mean3,
}

/// Summary of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitReport {
    pub name: String,
    pub final_phase: FlightPhase,
    pub alpha: f64,
    /// m, CoM height gain over the start
    pub peak_altitude: f64,
    /// m, per-axis mean absolute CoM error over the trajectory traversal,
    /// or over the airborne time when no trajectory was flown
    pub tracking_mae: [f64; 3],
    /// rad, per-axis (yaw, pitch, roll) mean absolute error, same window
    pub orientation_mae: [f64; 3],
    pub shutdown_reason: Option<String>,
    /// s, first loss of ground contact after take-off started
    pub liftoff_time: Option<f64>,
    /// s without ground contact after lift-off
    pub flight_time: f64,
    /// rad, largest Euler error while airborne
    pub max_attitude_error: f64,
    /// N, largest simulated thrust of any turbine
    pub max_thrust: f64,
    /// s of simulated time
    pub duration: f64,
    pub counters: RateCounters,
}

/// Owns the world, the estimators, the controller and the phase machine.
pub struct Runtime {
    pub model: RobotModel,
    pub config: ScenarioConfig,
    world: WorldState,
    sensors: SensorSuite,
    pose: PoseEstimator,
    pose_stamp: f64,
    thrust: ThrustEstimatorBank,
    ctrl: MpcController,
    schedule: TakeoffSchedule,
    reference: ReferenceTrajectory,
    traversal: Option<(f64, f64)>,
    last_reference_change: Option<f64>,
    throttle: Vector4<f64>,
    shutdown_step: Option<Vector4<f64>>,
    joint_prev: Vector4<f64>,
    joint_next: Vector4<f64>,
    joint_ref: Vector4<f64>,
    diagnostics: MpcDiagnostics,
    events: VecDeque<ScheduledEvent>,
    frozen: bool,
    estimate_fault: Vector3<f64>,
    counters: RateCounters,
    stats: FlightStats,
    contact: bool,
    logging_disabled: bool,
}

impl Runtime {
    pub fn new(scenario: Scenario) -> jetstack_core::Result<Self> {
        let Scenario { config, model, .. } = scenario;
        let mut noise = config.noise;
        noise.seed = config.seed;
        let world = WorldState::standing(&model, &config.sim);
        let sensors = SensorSuite::new(noise, &model)?;

        let pose_cfg = PoseFilterConfig {
            imu_orientation_std: noise.imu_orientation_std,
            imu_gyro_std: noise.imu_gyro_std,
            vio_position_std: noise.vio_position_std,
            vio_orientation_std: noise.vio_orientation_std,
            vio_velocity_std: noise.vio_velocity_std,
            vio_ang_velocity_std: noise.vio_ang_velocity_std,
            ..PoseFilterConfig::reference()
        };
        let pose = PoseEstimator::new(pose_cfg, world.base, POSE_PERIOD_TICKS as f64 * SIM_DT);
        let thrust_cfg = ThrustFilterConfig {
            coeffs: model.turbine,
            rpm_map: sensors.rpm_map,
            ft_std: noise.ft_force_std,
            rpm_std: noise.rpm_std,
            ..ThrustFilterConfig::reference()
        };
        let thrust = ThrustEstimatorBank::new(thrust_cfg, &model.jets, model.turbine.idle_thrust)?;
        let ctrl = MpcController::new(model.clone(), config.mpc, QpSolver::new(QpSettings::default()))?;

        let s = &config.schedule;
        let desired = Vector3::from(s.desired_euler);
        let schedule = TakeoffSchedule::new(s.ramp_rate, s.orientation_limit, desired);
        let com0 = world.com(&model);
        let reference = ReferenceTrajectory::hold(com0, desired);

        let mut events: Vec<ScheduledEvent> = config.events.clone();
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        let q0 = world.q.angles;
        Ok(Self {
            stats: FlightStats { com_z0: com0.z, ..Default::default() },
            contact: ground_contact_flag(&world),
            model,
            config,
            world,
            sensors,
            pose,
            pose_stamp: 0.0,
            thrust,
            ctrl,
            schedule,
            reference,
            traversal: None,
            last_reference_change: None,
            throttle: Vector4::zeros(),
            shutdown_step: None,
            joint_prev: q0,
            joint_next: q0,
            joint_ref: q0,
            diagnostics: MpcDiagnostics::default(),
            events: events.into(),
            frozen: false,
            estimate_fault: Vector3::zeros(),
            counters: RateCounters::default(),
            logging_disabled: false,
        })
    }

    pub fn phase(&self) -> FlightPhase {
        self.schedule.phase
    }

    pub fn schedule(&self) -> &TakeoffSchedule {
        &self.schedule
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn throttle(&self) -> Vector4<f64> {
        self.throttle
    }

    pub fn counters(&self) -> RateCounters {
        self.counters
    }

    pub fn time(&self) -> f64 {
        self.world.time
    }

    pub fn total_ticks(&self) -> u64 {
        (self.config.duration / SIM_DT).round() as u64
    }

    pub fn finished(&self) -> bool {
        self.world.tick >= self.total_ticks()
    }

    /// Adds a fixed (yaw, pitch, roll) offset to the orientation estimate the
    /// controller sees, as a corrupted estimator would.
    pub fn inject_estimate_fault(&mut self, euler_offset: Vector3<f64>) {
        self.estimate_fault = euler_offset;
    }

    /// Applies an operator command at the current simulated time.
    pub fn handle_command(&mut self, cmd: &OperatorCommand) -> CommandAck {
        let now = self.world.time;
        let result = self.apply(&cmd.kind, now);
        CommandAck {
            cmd: cmd.kind.name().into(),
            id: cmd.id,
            t: now,
            accepted: result.is_ok(),
            phase: self.schedule.phase,
            reason: result.err(),
        }
    }

    fn apply(&mut self, kind: &CommandKind, now: f64) -> Result<(), String> {
        use FlightPhase::*;
        kind.validate()?;
        let phase = self.schedule.phase;
        match kind {
            CommandKind::Arm => match phase {
                Idle => self.schedule.set_phase(Spool).map_err(|e| e.to_string()),
                _ => Err(format!("arm is only accepted in idle, phase is {phase:?}")),
            },
            CommandKind::StartTakeoff => match phase {
                Spool => self.schedule.set_phase(Ramp).map_err(|e| e.to_string()),
                Idle => Err("not armed".into()),
                _ => Err(format!("take-off already started, phase is {phase:?}")),
            },
            CommandKind::SetReference { z_offset, trajectory } => {
                if phase == Shutdown {
                    return Err("reference changes are not accepted after shutdown".into());
                }
                if let Some(dz) = z_offset {
                    self.reference = self.reference.with_offset(now, Vector3::new(0.0, 0.0, *dz));
                } else if let Some(id) = trajectory {
                    let traj = self.config.trajectory(id).ok_or_else(|| format!("unknown trajectory {id:?}"))?;
                    let origin = self.reference.position(now);
                    let mut points: Vec<(f64, Vector3<f64>)> = Vec::with_capacity(traj.waypoints.len() + 1);
                    if traj.waypoints[0][0] > 0.0 {
                        points.push((now, origin));
                    }
                    points.extend(traj.waypoints.iter().map(|w| (now + w[0], origin + Vector3::new(w[1], w[2], w[3]))));
                    self.reference = ReferenceTrajectory::new(points, self.reference.euler).map_err(|e| e.to_string())?;
                    self.traversal = Some((now + traj.waypoints[0][0], self.reference.end_time()));
                }
                self.last_reference_change = Some(now);
                Ok(())
            }
            CommandKind::Abort => {
                self.begin_shutdown("operator abort");
                Ok(())
            }
        }
    }

    fn begin_shutdown(&mut self, reason: &str) {
        self.schedule.shutdown(reason);
        if self.shutdown_step.is_none() {
            self.shutdown_step = Some(self.throttle / SHUTDOWN_RAMP_TICKS);
        }
    }

    /// Controller input assembled from the estimators and joint encoders.
    pub fn estimate(&self) -> MpcEstimate {
        let mut w = self.world;
        w.base = self.pose.filter.nominal;
        let (p, l) = w.momentum(&self.model);
        let centroidal = CentroidalState {
            com_position: w.com(&self.model),
            lin_momentum: p,
            euler_zyx: quaternion_to_euler(&w.base.orientation) + self.estimate_fault,
            ang_momentum: l,
        };
        let thrusts = self.thrust.thrusts();
        let rates = self.thrust.rates();
        MpcEstimate {
            state: MpcState { centroidal, jets: std::array::from_fn(|i| JetState::new(thrusts[i], rates[i])), q: self.world.q },
            stamp: self.pose_stamp,
        }
    }

    fn control_tick(&mut self, now: f64) {
        let est = self.estimate();
        self.schedule = advance_schedule(&self.schedule, &est.state.centroidal, self.contact, MPC_DT);
        self.diagnostics = MpcDiagnostics::default();
        let mut next_joint = self.joint_next;
        if self.schedule.phase == FlightPhase::Shutdown {
            let reason = self.schedule.shutdown_reason.clone().unwrap_or_default();
            self.begin_shutdown(&reason);
        } else {
            match mpc_step(&mut self.ctrl, &est, &self.schedule, &self.reference, now) {
                Ok(out) => {
                    self.counters.mpc_solves += out.diagnostics.status.is_some() as u64;
                    self.diagnostics = out.diagnostics;
                    if !self.config.telemetry.record_timing {
                        self.diagnostics.solve_time_s = 0.0;
                    }
                    match out.action {
                        MpcAction::Apply | MpcAction::Hold => {
                            self.throttle = out.throttle;
                            next_joint = out.joint_reference;
                        }
                        MpcAction::Shutdown(reason) => self.begin_shutdown(&reason),
                    }
                }
                Err(Error::StaleEstimate { .. }) => self.counters.stale_estimates += 1,
                Err(e @ Error::Singularity { .. }) => self.begin_shutdown(&e.to_string()),
                Err(e) => self.begin_shutdown(&format!("controller fault: {e}")),
            }
        }
        if let Some(step) = self.shutdown_step {
            self.throttle = (self.throttle - step).map(|u| u.max(0.0));
            if self.throttle.amax() < 1e-9 {
                self.throttle = Vector4::zeros();
            }
        }
        self.joint_prev = self.joint_ref;
        self.joint_next = next_joint;
        self.counters.throttle_updates += 1;
    }

    /// Runs one 1 ms tick and returns its telemetry frame.
    pub fn tick(&mut self) -> TelemetryFrame {
        let tick = self.world.tick;
        let now = self.world.time;
        let throttle_before = self.throttle;
        while self.events.front().is_some_and(|e| e.t <= now + 1e-9) {
            let e = self.events.pop_front().expect("front checked");
            let _ = self.apply(&e.kind, now);
        }
        let boundary = tick % MPC_PERIOD_TICKS == 0;
        if boundary {
            self.control_tick(now);
        }
        let phase_t = (tick % MPC_PERIOD_TICKS) as f64 * SIM_DT;
        self.joint_ref = interpolate_joint_reference(&self.joint_prev, &self.joint_next, phase_t, MPC_DT).unwrap_or(self.joint_next);
        self.counters.joint_reference_updates += 1;

        self.advance_world();
        self.consume_sensors();
        if !boundary && self.throttle != throttle_before {
            self.counters.off_boundary_throttle_changes += 1;
        }
        self.counters.ticks += 1;
        self.update_stats();
        self.frame()
    }

    fn advance_world(&mut self) {
        if !self.frozen {
            match world_step(&self.world, &self.throttle, &self.joint_ref, &self.model, &self.config.sim, SIM_DT) {
                Ok(w) => {
                    self.world = w;
                    self.contact = ground_contact_flag(&self.world);
                    return;
                }
                Err(e) => {
                    self.frozen = true;
                    self.begin_shutdown(&format!("simulation fault: {e}"));
                }
            }
        }
        self.world.time += SIM_DT;
        self.world.tick += 1;
    }

    fn consume_sensors(&mut self) {
        if self.frozen {
            return;
        }
        let batch = self.sensors.sample(&self.world, &self.model);
        if let (Some(ft), Some(rpm)) = (batch.ft, batch.rpm) {
            let u: [f64; 4] = self.throttle.into();
            match self.thrust.step(&u, &ft, &rpm, THRUST_PERIOD_TICKS as f64 * SIM_DT) {
                Ok(_) => self.counters.thrust_updates += 1,
                Err(e) => self.begin_shutdown(&format!("thrust estimator fault: {e}")),
            }
        }
        if let Some(v) = batch.vio {
            self.pose.push_vio(v);
        }
        if let Some(imu) = batch.imu {
            match self.pose.tick(self.world.time, Some(&imu)) {
                Ok(_) => {
                    self.pose_stamp = self.world.time;
                    self.counters.pose_updates += 1;
                }
                Err(e) => self.begin_shutdown(&format!("pose estimator fault: {e}")),
            }
        }
    }

    fn update_stats(&mut self) {
        let t = self.world.time;
        let com = self.world.com(&self.model);
        let s = &mut self.stats;
        s.peak_altitude = s.peak_altitude.max(com.z - s.com_z0);
        s.max_thrust = self.world.jets.iter().map(|j| j.thrust).fold(s.max_thrust, f64::max);
        let flying_phase = matches!(self.schedule.phase, FlightPhase::Ramp | FlightPhase::Airborne);
        if s.liftoff_time.is_none() && flying_phase && !self.contact && self.schedule.alpha > 0.0 {
            s.liftoff_time = Some(t);
        }
        let euler = quaternion_to_euler(&self.world.base.orientation);
        let e_err: [f64; 3] = std::array::from_fn(|i| wrap_angle(euler[i] - self.schedule.desired_euler[i]));
        let p_err: [f64; 3] = (com - self.reference.position(t)).into();
        if s.liftoff_time.is_some() && !self.contact && flying_phase {
            s.flight_time += SIM_DT;
            s.max_attitude_error = e_err.iter().fold(s.max_attitude_error, |m, v| m.max(v.abs()));
            s.flight_position.add(p_err);
            s.flight_orientation.add(e_err);
        }
        if let Some((t0, t1)) = self.traversal {
            if t > t0 && t <= t1 + 1e-9 {
                s.traversal_position.add(p_err);
                s.traversal_orientation.add(e_err);
            }
        }
    }

    fn frame(&self) -> TelemetryFrame {
        let t = self.world.time;
        let com = self.world.com(&self.model);
        let est = self.estimate().state;
        let com_ref = self.reference.position(t);
        let var = self.pose.filter.covariance.diagonal();
        let rpm_map = self.sensors.rpm_map;
        let thrust_est = self.thrust.thrusts();
        TelemetryFrame {
            schema: TELEMETRY_SCHEMA,
            tick: self.world.tick,
            t,
            phase: self.schedule.phase,
            alpha: self.schedule.alpha,
            com: com.into(),
            euler: quaternion_to_euler(&self.world.base.orientation).into(),
            com_est: est.centroidal.com_position.into(),
            euler_est: est.centroidal.euler_zyx.into(),
            pose_var: std::array::from_fn(|i| var[i]),
            com_ref: com_ref.into(),
            euler_ref: self.schedule.desired_euler.into(),
            tracking_error: (com - com_ref).into(),
            joints: self.world.q.angles.into(),
            joint_ref: self.joint_ref.into(),
            jets: std::array::from_fn(|i| JetFrame {
                thrust: self.world.jets[i].thrust,
                thrust_est: thrust_est[i],
                throttle: self.throttle[i],
                rpm: rpm_map.rpm(self.world.jets[i].thrust.max(0.0)),
            }),
            mpc: self.diagnostics,
            contact: self.contact,
            shutdown_reason: self.schedule.shutdown_reason.clone(),
            logging_disabled: self.logging_disabled,
        }
    }

    pub fn report(&self) -> ExitReport {
        let s = &self.stats;
        let (pos, ori) = if self.traversal.is_some() {
            (s.traversal_position.get(), s.traversal_orientation.get())
        } else {
            (s.flight_position.get(), s.flight_orientation.get())
        };
        ExitReport {
            name: self.config.name.clone(),
            final_phase: self.schedule.phase,
            alpha: self.schedule.alpha,
            peak_altitude: s.peak_altitude,
            tracking_mae: pos,
            orientation_mae: ori,
            shutdown_reason: self.schedule.shutdown_reason.clone(),
            liftoff_time: s.liftoff_time,
            flight_time: s.flight_time,
            max_attitude_error: s.max_attitude_error,
            max_thrust: s.max_thrust,
            duration: self.world.time,
            counters: self.counters,
        }
    }

    /// Marks later frames as not being logged.
    pub fn set_logging_disabled(&mut self, disabled: bool) {
        self.logging_disabled = disabled;
    }

    /// Time of the most recent accepted reference change.
    pub fn last_reference_change(&self) -> Option<f64> {
        self.last_reference_change
    }

    /// Runs to the configured duration, handing every frame to `sink`.
    pub fn run(&mut self, mut sink: impl FnMut(&TelemetryFrame)) -> ExitReport {
        while !self.finished() {
            let f = self.tick();
            sink(&f);
        }
        self.report()
    }
}
