//! Linear parameter-varying MPC over the centroidal momentum, the turbine
//! dynamics and the arm joints.
//!
//! State (24): CoM position, linear momentum, ZYX Euler angles, angular
//! momentum, thrusts, thrust rates, joint angles. Input (8): four throttles
//! held over each coarse step and four joint rates. The model is
//! re-linearized at every call and discretized with forward Euler.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6x4, SMatrix, SVector, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::jet::{JetState, THROTTLE_MAX};
use crate::math::{euler_rate_matrix, euler_rate_matrix_partials, euler_rotation_partials, euler_to_rotation, wrap_angle};
use crate::model::{CentroidalState, JointConfig, RobotModel, NUM_JETS, NUM_JOINTS};
use crate::qp::{QpProblem, QpSolution, QpSolver, QpStatus};

pub const STATE_DIM: usize = 24;
pub const INPUT_DIM: usize = 8;

pub const IX_COM: usize = 0;
pub const IX_LIN: usize = 3;
pub const IX_EULER: usize = 6;
pub const IX_ANG: usize = 9;
pub const IX_THRUST: usize = 12;
pub const IX_THRUST_RATE: usize = 16;
pub const IX_JOINT: usize = 20;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type InputVector = SVector<f64, INPUT_DIM>;
pub type ThrottleCommand = Vector4<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MpcState {
    pub centroidal: CentroidalState,
    pub jets: [JetState; NUM_JETS],
    pub q: JointConfig,
}

impl MpcState {
    pub fn to_vector(&self) -> StateVector {
        let c = &self.centroidal;
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(IX_COM).copy_from(&c.com_position);
        x.fixed_rows_mut::<3>(IX_LIN).copy_from(&c.lin_momentum);
        x.fixed_rows_mut::<3>(IX_EULER).copy_from(&c.euler_zyx);
        x.fixed_rows_mut::<3>(IX_ANG).copy_from(&c.ang_momentum);
        for i in 0..NUM_JETS {
            x[IX_THRUST + i] = self.jets[i].thrust;
            x[IX_THRUST_RATE + i] = self.jets[i].thrust_rate;
        }
        x.fixed_rows_mut::<4>(IX_JOINT).copy_from(&self.q.angles);
        x
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self {
            centroidal: CentroidalState {
                com_position: x.fixed_rows::<3>(IX_COM).into(),
                lin_momentum: x.fixed_rows::<3>(IX_LIN).into(),
                euler_zyx: x.fixed_rows::<3>(IX_EULER).into(),
                ang_momentum: x.fixed_rows::<3>(IX_ANG).into(),
            },
            jets: std::array::from_fn(|i| JetState::new(x[IX_THRUST + i], x[IX_THRUST_RATE + i])),
            q: JointConfig::new(x.fixed_rows::<4>(IX_JOINT).into()),
        }
    }

    pub fn thrusts(&self) -> Vector4<f64> {
        Vector4::from_fn(|i, _| self.jets[i].thrust)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcWeights {
    pub com: [f64; 3],
    pub euler: [f64; 3],
    pub lin_momentum: [f64; 3],
    pub ang_momentum: [f64; 3],
    /// On the deviation from the hover trim throttle.
    pub throttle: [f64; 4],
    pub joint_rate: [f64; 4],
    /// On throttle changes between consecutive coarse steps.
    pub throttle_change: f64,
    /// On the deviation of the joints from the trim posture.
    pub joint_posture: f64,
    /// Multiplies the state weights on the last horizon step.
    pub terminal_factor: f64,
}

impl Default for MpcWeights {
    fn default() -> Self {
        Self {
            com: [400.0, 400.0, 600.0],
            euler: [3000.0, 4000.0, 4000.0],
            lin_momentum: [0.2, 0.2, 0.2],
            ang_momentum: [20.0, 20.0, 20.0],
            throttle: [0.01; 4],
            joint_rate: [20.0; 4],
            throttle_change: 0.05,
            joint_posture: 50.0,
            terminal_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcParams {
    pub horizon_steps: usize,
    /// s, equal to the jet actuation period
    pub dt_coarse: f64,
    pub weights: MpcWeights,
    pub throttle_min: f64,
    pub throttle_max: f64,
    /// Largest throttle change per coarse step, percent.
    pub throttle_rate_max: f64,
    /// rad/s
    pub joint_rate_max: f64,
    /// rad, margin below pitch = pi/2
    pub pitch_guard: f64,
    /// rad
    pub shutdown_orientation_limit: f64,
    /// s
    pub max_estimate_age: f64,
}

impl Default for MpcParams {
    fn default() -> Self {
        Self {
            horizon_steps: 15,
            dt_coarse: 0.1,
            weights: MpcWeights::default(),
            throttle_min: 0.0,
            throttle_max: THROTTLE_MAX,
            throttle_rate_max: 25.0,
            joint_rate_max: 1.5,
            pitch_guard: 0.2,
            shutdown_orientation_limit: 0.52,
            max_estimate_age: 0.05,
        }
    }
}

impl MpcParams {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps < 2 {
            return Err(domain("horizon must be at least 2 steps"));
        }
        if !(self.dt_coarse > 0.0) {
            return Err(domain("dt_coarse must be positive"));
        }
        let w = &self.weights;
        let all = w.com.iter().chain(&w.euler).chain(&w.lin_momentum).chain(&w.ang_momentum).chain(&w.throttle).chain(&w.joint_rate);
        if all.chain([&w.throttle_change, &w.joint_posture, &w.terminal_factor]).any(|v| !(*v >= 0.0)) {
            return Err(domain("MPC weights must be non-negative"));
        }
        if !(0.0 <= self.throttle_min && self.throttle_min < self.throttle_max && self.throttle_max <= THROTTLE_MAX) {
            return Err(domain("throttle bounds must lie in [0, 100]"));
        }
        if !(self.throttle_rate_max > 0.0 && self.joint_rate_max > 0.0) {
            return Err(domain("rate bounds must be positive"));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.pitch_guard) {
            return Err(domain("pitch guard must lie in [0, pi/2)"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Take-off schedule
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightPhase {
    Idle,
    Spool,
    Ramp,
    Airborne,
    Shutdown,
}

impl FlightPhase {
    pub fn can_transition_to(self, next: FlightPhase) -> bool {
        use FlightPhase::*;
        matches!((self, next), (Idle, Spool) | (Spool, Ramp) | (Ramp, Airborne) | (_, Shutdown))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TakeoffSchedule {
    pub alpha: f64,
    /// 1/s
    pub ramp_rate: f64,
    pub phase: FlightPhase,
    /// rad
    pub orientation_limit: f64,
    pub desired_euler: Vector3<f64>,
    pub shutdown_reason: Option<String>,
}

impl TakeoffSchedule {
    pub fn new(ramp_rate: f64, orientation_limit: f64, desired_euler: Vector3<f64>) -> Self {
        Self { alpha: 0.0, ramp_rate, phase: FlightPhase::Idle, orientation_limit, desired_euler, shutdown_reason: None }
    }

    pub fn set_phase(&mut self, next: FlightPhase) -> Result<()> {
        if !self.phase.can_transition_to(next) {
            return Err(domain(format!("transition {:?} -> {next:?} not allowed", self.phase)));
        }
        self.phase = next;
        Ok(())
    }

    pub fn shutdown(&mut self, reason: impl Into<String>) {
        if self.phase != FlightPhase::Shutdown {
            self.phase = FlightPhase::Shutdown;
            self.shutdown_reason = Some(reason.into());
        }
    }
}

/// Largest wrapped Euler error w.r.t. the desired orientation.
pub fn orientation_error(euler: &Vector3<f64>, desired: &Vector3<f64>) -> f64 {
    (0..3).map(|i| wrap_angle(euler[i] - desired[i]).abs()).fold(0.0, f64::max)
}

pub fn advance_schedule(schedule: &TakeoffSchedule, x: &CentroidalState, ground_contact: bool, dt: f64) -> TakeoffSchedule {
    let mut s = schedule.clone();
    if s.phase == FlightPhase::Shutdown {
        return s;
    }
    let err = orientation_error(&x.euler_zyx, &s.desired_euler);
    if !(err <= s.orientation_limit) {
        s.shutdown(format!("orientation error {:.1} deg exceeds limit {:.1} deg", err.to_degrees(), s.orientation_limit.to_degrees()));
        return s;
    }
    if s.phase == FlightPhase::Ramp {
        s.alpha = (s.alpha + s.ramp_rate * dt).min(1.0);
        if s.alpha >= 1.0 && !ground_contact {
            s.phase = FlightPhase::Airborne;
        }
    }
    s
}

// ---------------------------------------------------------------------------
// Reference
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    /// `(t s, CoM position m)`, strictly increasing in time.
    pub waypoints: Vec<(f64, Vector3<f64>)>,
    pub euler: Vector3<f64>,
}

impl ReferenceTrajectory {
    pub fn new(waypoints: Vec<(f64, Vector3<f64>)>, euler: Vector3<f64>) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(domain("reference needs at least one waypoint"));
        }
        if waypoints.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(domain("reference timestamps must be strictly increasing"));
        }
        if waypoints.iter().any(|(t, p)| !t.is_finite() || p.iter().any(|v| !v.is_finite())) || euler.iter().any(|v| !v.is_finite()) {
            return Err(domain("reference must be finite"));
        }
        Ok(Self { waypoints, euler })
    }

    pub fn hold(position: Vector3<f64>, euler: Vector3<f64>) -> Self {
        Self { waypoints: vec![(0.0, position)], euler }
    }

    fn segment(&self, t: f64) -> Option<usize> {
        let w = &self.waypoints;
        if w.len() < 2 || t < w[0].0 || t >= w[w.len() - 1].0 {
            return None;
        }
        Some(w.partition_point(|(tw, _)| *tw <= t) - 1)
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        let w = &self.waypoints;
        match self.segment(t) {
            Some(i) => {
                let (t0, p0) = w[i];
                let (t1, p1) = w[i + 1];
                p0 + (p1 - p0) * ((t - t0) / (t1 - t0))
            }
            None if t < w[0].0 => w[0].1,
            None => w[w.len() - 1].1,
        }
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        match self.segment(t) {
            Some(i) => {
                let (t0, p0) = self.waypoints[i];
                let (t1, p1) = self.waypoints[i + 1];
                (p1 - p0) / (t1 - t0)
            }
            None => Vector3::zeros(),
        }
    }

    /// Adds `delta` to every point from `t0` on, as a 1 ms ramp.
    pub fn with_offset(&self, t0: f64, delta: Vector3<f64>) -> Self {
        let t1 = t0 + 1e-3;
        let mut w: Vec<(f64, Vector3<f64>)> = self.waypoints.iter().copied().filter(|(t, _)| *t < t0).collect();
        w.push((t0, self.position(t0)));
        w.push((t1, self.position(t1) + delta));
        w.extend(self.waypoints.iter().filter(|(t, _)| *t > t1).map(|(t, p)| (*t, p + delta)));
        Self { waypoints: w, euler: self.euler }
    }

    /// End of the last segment.
    pub fn end_time(&self) -> f64 {
        self.waypoints[self.waypoints.len() - 1].0
    }
}

// ---------------------------------------------------------------------------
// Prediction model
// ---------------------------------------------------------------------------

fn rotated_wrench(rot: &Matrix3<f64>, w: &Matrix6x4<f64>) -> Matrix6x4<f64> {
    let mut out = Matrix6x4::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&(rot * w.fixed_rows::<3>(0)));
    out.fixed_rows_mut::<3>(3).copy_from(&(rot * w.fixed_rows::<3>(3)));
    out
}

fn check_input(u: &InputVector) -> Result<()> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(domain("non-finite MPC input"));
    }
    Ok(())
}

/// Continuous-time dynamics `dx/dt`. Thrusts follow the turbine model
/// without the physical clamp.
pub fn continuous_dynamics(model: &RobotModel, x: &StateVector, u: &InputVector, alpha: f64, guard: f64) -> Result<StateVector> {
    check_input(u)?;
    let s = MpcState::from_vector(x);
    s.centroidal.check_pitch_guard(guard)?;
    let e = s.centroidal.euler_zyx;
    let rot = euler_to_rotation(&e);
    let w = rotated_wrench(&rot, &model.body_wrench_map(&s.q)?);
    let mut wrench: Vector6<f64> = w * s.thrusts();
    wrench[2] -= alpha * model.weight();
    let inertia_inv = rot * model.inertia_body_inv() * rot.transpose();
    let omega = inertia_inv * s.centroidal.ang_momentum;
    let e_rate = euler_rate_matrix(&e).try_inverse().ok_or(Error::Singularity { pitch: e[1] })? * omega;
    let jc = &model.turbine;

    let mut f = StateVector::zeros();
    f.fixed_rows_mut::<3>(IX_COM).copy_from(&(s.centroidal.lin_momentum / model.mass));
    f.fixed_rows_mut::<3>(IX_LIN).copy_from(&wrench.fixed_rows::<3>(0));
    f.fixed_rows_mut::<3>(IX_EULER).copy_from(&e_rate);
    f.fixed_rows_mut::<3>(IX_ANG).copy_from(&wrench.fixed_rows::<3>(3));
    for i in 0..NUM_JETS {
        f[IX_THRUST + i] = s.jets[i].thrust_rate;
        f[IX_THRUST_RATE + i] = jc.acceleration(s.jets[i].thrust, s.jets[i].thrust_rate, u[i]);
    }
    f.fixed_rows_mut::<4>(IX_JOINT).copy_from(&u.fixed_rows::<4>(NUM_JETS));
    Ok(f)
}

/// One forward-Euler step of the prediction model.
pub fn prediction_step(model: &RobotModel, x: &StateVector, u: &InputVector, alpha: f64, dt: f64, guard: f64) -> Result<StateVector> {
    Ok(x + continuous_dynamics(model, x, u, alpha, guard)? * dt)
}

/// `x+ = A x + B u + c`
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionModel {
    pub a: SMatrix<f64, STATE_DIM, STATE_DIM>,
    pub b: SMatrix<f64, STATE_DIM, INPUT_DIM>,
    pub c: StateVector,
}

/// Continuous-time Jacobians `(df/dx, df/du)`.
pub fn dynamics_jacobians(
    model: &RobotModel,
    x: &StateVector,
    u: &InputVector,
    guard: f64,
) -> Result<(SMatrix<f64, STATE_DIM, STATE_DIM>, SMatrix<f64, STATE_DIM, INPUT_DIM>)> {
    check_input(u)?;
    let s = MpcState::from_vector(x);
    s.centroidal.check_pitch_guard(guard)?;
    let e = s.centroidal.euler_zyx;
    let thrusts = s.thrusts();
    let rot = euler_to_rotation(&e);
    let d_rot = euler_rotation_partials(&e);
    let wb = model.body_wrench_map(&s.q)?;
    let jq = rotated_wrench(&rot, &model.body_wrench_jacobian(&s.q, &thrusts)?);
    let wt = wb * thrusts;
    let (fb, tb) = (wt.fixed_rows::<3>(0).into_owned(), wt.fixed_rows::<3>(3).into_owned());

    let i_inv = model.inertia_body_inv();
    let inertia_inv = rot * i_inv * rot.transpose();
    let l = s.centroidal.ang_momentum;
    let omega = inertia_inv * l;
    let e_mat = euler_rate_matrix(&e);
    let e_inv = e_mat.try_inverse().ok_or(Error::Singularity { pitch: e[1] })?;
    let d_e_mat = euler_rate_matrix_partials(&e);

    let mut a = SMatrix::<f64, STATE_DIM, STATE_DIM>::zeros();
    let mut b = SMatrix::<f64, STATE_DIM, INPUT_DIM>::zeros();
    a.fixed_view_mut::<3, 3>(IX_COM, IX_LIN).copy_from(&(Matrix3::identity() / model.mass));
    for j in 0..3 {
        a.fixed_view_mut::<3, 1>(IX_LIN, IX_EULER + j).copy_from(&(d_rot[j] * fb));
        a.fixed_view_mut::<3, 1>(IX_ANG, IX_EULER + j).copy_from(&(d_rot[j] * tb));
        let d_inertia = d_rot[j] * i_inv * rot.transpose() + rot * i_inv * d_rot[j].transpose();
        let col = e_inv * (d_inertia * l) - e_inv * d_e_mat[j] * e_inv * omega;
        a.fixed_view_mut::<3, 1>(IX_EULER, IX_EULER + j).copy_from(&col);
    }
    a.fixed_view_mut::<3, 3>(IX_EULER, IX_ANG).copy_from(&(e_inv * inertia_inv));
    let w = rotated_wrench(&rot, &wb);
    a.fixed_view_mut::<3, 4>(IX_LIN, IX_THRUST).copy_from(&w.fixed_rows::<3>(0));
    a.fixed_view_mut::<3, 4>(IX_ANG, IX_THRUST).copy_from(&w.fixed_rows::<3>(3));
    a.fixed_view_mut::<3, 4>(IX_LIN, IX_JOINT).copy_from(&jq.fixed_rows::<3>(0));
    a.fixed_view_mut::<3, 4>(IX_ANG, IX_JOINT).copy_from(&jq.fixed_rows::<3>(3));
    let jc = &model.turbine;
    for i in 0..NUM_JETS {
        a[(IX_THRUST + i, IX_THRUST_RATE + i)] = 1.0;
        a[(IX_THRUST_RATE + i, IX_THRUST + i)] = jc.a1;
        a[(IX_THRUST_RATE + i, IX_THRUST_RATE + i)] = jc.a2;
        b[(IX_THRUST_RATE + i, i)] = jc.b1 + 2.0 * jc.b2 * u[i];
    }
    for j in 0..NUM_JOINTS {
        b[(IX_JOINT + j, NUM_JETS + j)] = 1.0;
    }
    Ok((a, b))
}

/// Discrete model linearized at `(x, throttle)` with zero joint rates.
pub fn linearize_prediction_model(
    model: &RobotModel,
    x: &MpcState,
    throttle: &ThrottleCommand,
    alpha: f64,
    params: &MpcParams,
) -> Result<PredictionModel> {
    let xv = x.to_vector();
    let mut u0 = InputVector::zeros();
    u0.fixed_rows_mut::<4>(0).copy_from(throttle);
    let dt = params.dt_coarse;
    let (ac, bc) = dynamics_jacobians(model, &xv, &u0, params.pitch_guard)?;
    let a = SMatrix::<f64, STATE_DIM, STATE_DIM>::identity() + ac * dt;
    let b = bc * dt;
    let next = prediction_step(model, &xv, &u0, alpha, dt, params.pitch_guard)?;
    let c = next - a * xv - b * u0;
    Ok(PredictionModel { a, b, c })
}

// ---------------------------------------------------------------------------
// Hover trim
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoverTrim {
    pub thrusts: Vector4<f64>,
    pub throttle: ThrottleCommand,
    pub q: JointConfig,
    /// Remaining wrench error, N and N m.
    pub residual: f64,
}

/// Thrusts and joints that carry `alpha` of the weight with zero net
/// torque and horizontal force at level attitude. Gauss-Newton on
/// `W_b(q) T = alpha m g e_z`, minimum-norm steps from `q_guess`.
pub fn hover_trim(model: &RobotModel, q_guess: &JointConfig, alpha: f64) -> Result<HoverTrim> {
    let target = Vector6::new(0.0, 0.0, alpha * model.weight(), 0.0, 0.0, 0.0);
    let mut q = *q_guess;
    let mut t = Vector4::from_element(alpha * model.weight() / NUM_JETS as f64);
    let mut residual = f64::INFINITY;
    for _ in 0..50 {
        let r = model.body_wrench_map(&q)? * t - target;
        residual = r.amax();
        if residual < 1e-10 {
            break;
        }
        let mut jac = SMatrix::<f64, 6, 8>::zeros();
        jac.fixed_columns_mut::<4>(0).copy_from(&model.body_wrench_map(&q)?);
        jac.fixed_columns_mut::<4>(4).copy_from(&model.body_wrench_jacobian(&q, &t)?);
        // Joint columns scaled so a radian weighs like 100 N.
        let scale = 100.0;
        let mut js = jac;
        for c in 4..8 {
            js.column_mut(c).scale_mut(scale);
        }
        let jjt = js * js.transpose() + SMatrix::<f64, 6, 6>::identity() * 1e-12;
        let step = js.transpose() * jjt.try_inverse().ok_or_else(|| Error::Numeric("hover trim Jacobian is singular".into()))? * r;
        t -= step.fixed_rows::<4>(0);
        let dq: Vector4<f64> = step.fixed_rows::<4>(4) * scale;
        q = JointConfig::new(model.joint_limits.clamp(&(q.angles - dq)));
    }
    if residual > 1e-6 || t.iter().any(|v| *v < 0.0) {
        return Err(Error::Numeric(format!("hover trim did not converge (residual {residual:e})")));
    }
    let throttle = t.map(|ti| model.turbine.throttle_for_thrust(ti));
    Ok(HoverTrim { thrusts: t, throttle, q, residual })
}

// ---------------------------------------------------------------------------
// QP transcription
// ---------------------------------------------------------------------------

/// Everything the transcription needs besides the model.
#[derive(Debug, Clone, PartialEq)]
pub struct QpContext {
    pub x: MpcState,
    /// Throttle applied during the previous coarse step.
    pub prev_throttle: ThrottleCommand,
    pub alpha: f64,
    /// Time of the first predicted step.
    pub t: f64,
    pub trim: HoverTrim,
}

/// Condensed QP plus the prediction pieces `X = x_free + S_u U`.
#[derive(Debug, Clone)]
pub struct MpcQp {
    pub problem: QpProblem,
    pub x_free: DVector<f64>,
    pub s_u: DMatrix<f64>,
    pub references: DVector<f64>,
}

fn state_weights(w: &MpcWeights) -> SVector<f64, STATE_DIM> {
    let mut q = SVector::<f64, STATE_DIM>::zeros();
    for i in 0..3 {
        q[IX_COM + i] = w.com[i];
        q[IX_LIN + i] = w.lin_momentum[i];
        q[IX_EULER + i] = w.euler[i];
        q[IX_ANG + i] = w.ang_momentum[i];
    }
    for j in 0..NUM_JOINTS {
        q[IX_JOINT + j] = w.joint_posture;
    }
    q
}

pub fn build_qp(
    model: &RobotModel,
    ctx: &QpContext,
    reference: &ReferenceTrajectory,
    params: &MpcParams,
) -> Result<MpcQp> {
    params.validate()?;
    let n_h = params.horizon_steps;
    let (nx, nu) = (STATE_DIM, INPUT_DIM);
    let nv = nu * n_h;
    let dt = params.dt_coarse;
    let pm = linearize_prediction_model(model, &ctx.x, &ctx.prev_throttle, ctx.alpha, params)?;
    let a = DMatrix::from_column_slice(nx, nx, pm.a.as_slice());
    let b = DMatrix::from_column_slice(nx, nu, pm.b.as_slice());
    let c = DVector::from_column_slice(pm.c.as_slice());
    let x0 = DVector::from_column_slice(ctx.x.to_vector().as_slice());

    // Free response and input-to-state map.
    let mut x_free = DVector::zeros(nx * n_h);
    let mut s_u = DMatrix::zeros(nx * n_h, nv);
    let mut xk = x0.clone();
    for k in 0..n_h {
        xk = &a * &xk + &c;
        x_free.rows_mut(k * nx, nx).copy_from(&xk);
        let row = k * nx;
        s_u.view_mut((row, k * nu), (nx, nu)).copy_from(&b);
        if k > 0 {
            let prev = s_u.view((row - nx, 0), (nx, k * nu)).into_owned();
            let propagated = &a * prev;
            s_u.view_mut((row, 0), (nx, k * nu)).copy_from(&propagated);
        }
    }

    // References and weights.
    let qw = state_weights(&params.weights);
    let e0 = ctx.x.centroidal.euler_zyx;
    let euler_ref = Vector3::from_fn(|i, _| e0[i] + wrap_angle(reference.euler[i] - e0[i]));
    let mut refs = DVector::zeros(nx * n_h);
    let mut wdiag = DVector::zeros(nx * n_h);
    for k in 0..n_h {
        let tk = ctx.t + (k + 1) as f64 * dt;
        let row = k * nx;
        let mut r = StateVector::zeros();
        r.fixed_rows_mut::<3>(IX_COM).copy_from(&reference.position(tk));
        r.fixed_rows_mut::<3>(IX_LIN).copy_from(&(reference.velocity(tk) * model.mass));
        r.fixed_rows_mut::<3>(IX_EULER).copy_from(&euler_ref);
        r.fixed_rows_mut::<4>(IX_JOINT).copy_from(&ctx.trim.q.angles);
        for i in 0..NUM_JETS {
            r[IX_THRUST + i] = ctx.trim.thrusts[i];
        }
        refs.rows_mut(row, nx).copy_from(&r);
        let factor = if k + 1 == n_h { params.weights.terminal_factor } else { 1.0 };
        wdiag.rows_mut(row, nx).copy_from(&(qw * factor));
    }

    // Input weights: effort about trim, joint rates about zero, throttle changes.
    let w = &params.weights;
    let mut h = DMatrix::zeros(nv, nv);
    let mut f = DVector::zeros(nv);
    for k in 0..n_h {
        for i in 0..NUM_JETS {
            let ix = k * nu + i;
            h[(ix, ix)] += w.throttle[i];
            f[ix] -= w.throttle[i] * ctx.trim.throttle[i];
            // (u_k - u_{k-1})^2
            h[(ix, ix)] += w.throttle_change;
            if k == 0 {
                f[ix] -= w.throttle_change * ctx.prev_throttle[i];
            } else {
                let jx = ix - nu;
                h[(jx, jx)] += w.throttle_change;
                h[(ix, jx)] -= w.throttle_change;
                h[(jx, ix)] -= w.throttle_change;
            }
        }
        for j in 0..NUM_JOINTS {
            let ix = k * nu + NUM_JETS + j;
            h[(ix, ix)] += w.joint_rate[j];
        }
    }
    let weighted_su = DMatrix::from_fn(nx * n_h, nv, |r, c| s_u[(r, c)] * wdiag[r]);
    h += s_u.transpose() * &weighted_su;
    let dev = &x_free - &refs;
    f += weighted_su.transpose() * dev;
    let h = (&h + h.transpose()) * 0.5;

    // Bounds.
    let mut lb = DVector::zeros(nv);
    let mut ub = DVector::zeros(nv);
    for k in 0..n_h {
        for i in 0..NUM_JETS {
            lb[k * nu + i] = params.throttle_min;
            ub[k * nu + i] = params.throttle_max;
        }
        for j in 0..NUM_JOINTS {
            lb[k * nu + NUM_JETS + j] = -params.joint_rate_max;
            ub[k * nu + NUM_JETS + j] = params.joint_rate_max;
        }
    }

    // Inequalities: throttle rate (two-sided), joint limits (two-sided), thrust >= 0.
    let n_rows = n_h * (2 * NUM_JETS + 2 * NUM_JOINTS + NUM_JETS);
    let mut a_in = DMatrix::zeros(n_rows, nv);
    let mut b_in = DVector::zeros(n_rows);
    let mut r = 0;
    for k in 0..n_h {
        for i in 0..NUM_JETS {
            let ix = k * nu + i;
            for sign in [1.0, -1.0] {
                a_in[(r, ix)] = sign;
                if k == 0 {
                    b_in[r] = params.throttle_rate_max + sign * ctx.prev_throttle[i];
                } else {
                    a_in[(r, ix - nu)] = -sign;
                    b_in[r] = params.throttle_rate_max;
                }
                r += 1;
            }
        }
    }
    let limits = &model.joint_limits;
    for k in 0..n_h {
        for j in 0..NUM_JOINTS {
            let row = k * nx + IX_JOINT + j;
            let lo = limits.lower[j].min(x_free[row]);
            let hi = limits.upper[j].max(x_free[row]);
            for (sign, bound) in [(1.0, hi), (-1.0, -lo)] {
                for c in 0..nv {
                    a_in[(r, c)] = sign * s_u[(row, c)];
                }
                b_in[r] = bound - sign * x_free[row];
                r += 1;
            }
        }
        for i in 0..NUM_JETS {
            let row = k * nx + IX_THRUST + i;
            for c in 0..nv {
                a_in[(r, c)] = -s_u[(row, c)];
            }
            b_in[r] = x_free[row].max(0.0);
            r += 1;
        }
    }
    debug_assert_eq!(r, n_rows);

    let problem = QpProblem {
        h,
        f,
        a_eq: DMatrix::zeros(0, nv),
        b_eq: DVector::zeros(0),
        a_in,
        b_in,
        lb,
        ub,
    };
    Ok(MpcQp { problem, x_free, s_u, references: refs })
}

/// Predicted states for an input sequence, `nx * horizon`.
pub fn predicted_states(qp: &MpcQp, inputs: &DVector<f64>) -> DVector<f64> {
    &qp.x_free + &qp.s_u * inputs
}

// ---------------------------------------------------------------------------
// Controller
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MpcDiagnostics {
    pub iterations: usize,
    pub cost: f64,
    pub status: Option<QpStatusTag>,
    pub solve_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatusTag {
    Optimal,
    MaxIter,
    Infeasible,
}

impl From<QpStatus> for QpStatusTag {
    fn from(s: QpStatus) -> Self {
        match s {
            QpStatus::Optimal => QpStatusTag::Optimal,
            QpStatus::MaxIter => QpStatusTag::MaxIter,
            QpStatus::Infeasible => QpStatusTag::Infeasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MpcAction {
    Apply,
    /// Previous command repeated after a failed solve.
    Hold,
    Shutdown(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutput {
    pub throttle: ThrottleCommand,
    pub joint_reference: Vector4<f64>,
    pub diagnostics: MpcDiagnostics,
    pub action: MpcAction,
}

/// State estimate handed to the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcEstimate {
    pub state: MpcState,
    /// s, time the estimate refers to
    pub stamp: f64,
}

/// Controller memory between ticks.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub model: RobotModel,
    pub params: MpcParams,
    pub solver: QpSolver,
    pub last_throttle: ThrottleCommand,
    pub last_joint_reference: Option<Vector4<f64>>,
    pub consecutive_failures: usize,
    /// Trim posture, recomputed when alpha changes.
    trim_cache: Option<(f64, HoverTrim)>,
    nominal_q: JointConfig,
}

impl MpcController {
    pub fn new(model: RobotModel, params: MpcParams, solver: QpSolver) -> Result<Self> {
        params.validate()?;
        let nominal_q = hover_trim(&model, &JointConfig::zero(), 1.0)?.q;
        Ok(Self {
            model,
            params,
            solver,
            last_throttle: ThrottleCommand::zeros(),
            last_joint_reference: None,
            consecutive_failures: 0,
            trim_cache: None,
            nominal_q,
        })
    }

    /// Trim at `alpha`, with the full-weight posture as joint reference.
    pub fn trim(&mut self, alpha: f64) -> Result<HoverTrim> {
        if let Some((a, t)) = self.trim_cache {
            if a == alpha {
                return Ok(t);
            }
        }
        let mut t = if alpha > 0.0 {
            hover_trim(&self.model, &self.nominal_q, alpha)?
        } else {
            HoverTrim { thrusts: Vector4::zeros(), throttle: Vector4::zeros(), q: self.nominal_q, residual: 0.0 }
        };
        t.q = self.nominal_q;
        self.trim_cache = Some((alpha, t));
        Ok(t)
    }

    fn hold(&self, x: &MpcState) -> Vector4<f64> {
        self.last_joint_reference.unwrap_or(x.q.angles)
    }
}

/// One controller tick at time `now`.
pub fn mpc_step(
    ctrl: &mut MpcController,
    est: &MpcEstimate,
    schedule: &TakeoffSchedule,
    reference: &ReferenceTrajectory,
    now: f64,
) -> Result<MpcOutput> {
    let age = now - est.stamp;
    if !(age <= ctrl.params.max_estimate_age) {
        return Err(Error::StaleEstimate { age_ms: age * 1e3 });
    }
    let x = &est.state;
    let held = |ctrl: &MpcController, action| MpcOutput {
        throttle: ctrl.last_throttle,
        joint_reference: ctrl.hold(x),
        diagnostics: MpcDiagnostics::default(),
        action,
    };
    match schedule.phase {
        FlightPhase::Idle | FlightPhase::Spool | FlightPhase::Shutdown => {
            ctrl.last_throttle = ThrottleCommand::zeros();
            let q_ref = ctrl.hold(x);
            ctrl.last_joint_reference = Some(q_ref);
            return Ok(MpcOutput {
                throttle: ctrl.last_throttle,
                joint_reference: q_ref,
                diagnostics: MpcDiagnostics::default(),
                action: MpcAction::Apply,
            });
        }
        FlightPhase::Ramp | FlightPhase::Airborne => {}
    }
    x.centroidal.check_pitch_guard(ctrl.params.pitch_guard)?;
    let trim = ctrl.trim(schedule.alpha)?;
    let ctx = QpContext { x: *x, prev_throttle: ctrl.last_throttle, alpha: schedule.alpha, t: now, trim };
    let qp = build_qp(&ctrl.model, &ctx, reference, &ctrl.params)?;
    let start = std::time::Instant::now();
    let solved = ctrl.solver.solve(&qp.problem);
    let solve_time_s = start.elapsed().as_secs_f64();
    let sol: Option<QpSolution> = solved.ok().filter(|s| s.status == QpStatus::Optimal);
    let Some(sol) = sol else {
        ctrl.consecutive_failures += 1;
        if ctrl.consecutive_failures >= 2 {
            return Ok(held(ctrl, MpcAction::Shutdown("QP failed on two consecutive ticks".into())));
        }
        return Ok(held(ctrl, MpcAction::Hold));
    };
    ctrl.consecutive_failures = 0;
    let p = &ctrl.params;
    let throttle = Vector4::from_fn(|i, _| {
        let lo = (ctrl.last_throttle[i] - p.throttle_rate_max).max(p.throttle_min);
        let hi = (ctrl.last_throttle[i] + p.throttle_rate_max).min(p.throttle_max);
        sol.x[i].clamp(lo, hi)
    });
    let rates = sol.x.fixed_rows::<4>(NUM_JETS).into_owned();
    let joint_reference = ctrl.model.joint_limits.clamp(&(x.q.angles + rates * p.dt_coarse));
    ctrl.last_throttle = throttle;
    ctrl.last_joint_reference = Some(joint_reference);
    Ok(MpcOutput {
        throttle,
        joint_reference,
        diagnostics: MpcDiagnostics {
            iterations: sol.iterations,
            cost: sol.objective,
            status: Some(sol.status.into()),
            solve_time_s,
        },
        action: MpcAction::Apply,
    })
}

/// Linear interpolation of joint references at 1 kHz, `t` in `[0, dt]`.
pub fn interpolate_joint_reference(prev: &Vector4<f64>, next: &Vector4<f64>, t: f64, dt: f64) -> Result<Vector4<f64>> {
    if !(0.0..=dt + 1e-12).contains(&t) {
        return Err(domain(format!("interpolation time {t} outside [0, {dt}]")));
    }
    Ok(prev + (next - prev) * (t / dt).min(1.0))
}
