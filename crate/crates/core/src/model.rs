//! Robot model, reduced jet-mount kinematics and the centroidal wrench map.
//!
//! Each arm carries one turbine behind a shoulder pitch joint followed by a
//! shoulder roll joint. The two jetpack turbines are rigidly attached to the
//! base. World frame is z-up; gravity contributes `(0, 0, -m*g)` to the force.

use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Matrix6x4, Point3, Translation3, Unit, UnitQuaternion, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::jet::JetCoefficients;
use crate::math::{d_rot_x, d_rot_y, rot_x, rot_y};

pub const NUM_JETS: usize = 4;
pub const NUM_JOINTS: usize = 4;
pub const ROBOT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MountParent {
    LeftArm,
    RightArm,
    JetpackLeft,
    JetpackRight,
}

impl MountParent {
    /// Indices of the `(pitch, roll)` joints driving this mount, if any.
    pub fn joints(self) -> Option<(usize, usize)> {
        match self {
            MountParent::LeftArm => Some((0, 1)),
            MountParent::RightArm => Some((2, 3)),
            MountParent::JetpackLeft | MountParent::JetpackRight => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JetMount {
    pub parent: MountParent,
    /// Parent frame to nozzle frame.
    pub fixed_transform: Isometry3<f64>,
    /// Extra rotation about the lateral (y) axis, rad.
    pub tilt: f64,
    /// Direction of the force applied to the body, nozzle frame.
    pub thrust_axis_local: Unit<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootGeometry {
    /// Contact points in the base frame, m.
    pub contact_points: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub lower: Vector4<f64>,
    pub upper: Vector4<f64>,
}

impl JointLimits {
    pub fn clamp(&self, q: &Vector4<f64>) -> Vector4<f64> {
        q.zip_zip_map(&self.lower, &self.upper, |v, lo, hi| v.clamp(lo, hi))
    }
}

/// Left shoulder pitch, left shoulder roll, right shoulder pitch, right
/// shoulder roll, rad.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointConfig {
    pub angles: Vector4<f64>,
}

impl JointConfig {
    pub fn new(angles: Vector4<f64>) -> Self {
        Self { angles }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn check_limits(&self, limits: &JointLimits) -> Result<()> {
        for j in 0..NUM_JOINTS {
            let v = self.angles[j];
            if !v.is_finite() || v < limits.lower[j] || v > limits.upper[j] {
                return Err(domain(format!(
                    "joint {j} at {v} rad outside [{}, {}]",
                    limits.lower[j], limits.upper[j]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    /// kg
    pub mass: f64,
    /// Body-frame inertia about the CoM, kg m^2.
    pub inertia_body: Matrix3<f64>,
    /// Magnitude of gravity, m/s^2.
    pub gravity_accel: f64,
    /// Base origin to CoM, base frame, m.
    pub com_offset: Vector3<f64>,
    /// Left and right shoulder joint origins, base frame, m.
    pub shoulders: [Vector3<f64>; 2],
    pub joint_limits: JointLimits,
    pub jets: Vec<JetMount>,
    pub feet: Vec<FootGeometry>,
    pub turbine: JetCoefficients,
    /// RPM at which the static RPM-to-thrust map reaches peak thrust.
    pub rpm_max: f64,
}

/// Nozzle position and thrust axis, both in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetPose {
    pub position: Vector3<f64>,
    pub axis: Vector3<f64>,
}

/// Jet positions and axes in the base frame with their joint derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct MountKinematics {
    pub positions: [Vector3<f64>; NUM_JETS],
    pub axes: [Vector3<f64>; NUM_JETS],
    /// `d_positions[i][j]` = d position_i / d q_j
    pub d_positions: [[Vector3<f64>; NUM_JOINTS]; NUM_JETS],
    pub d_axes: [[Vector3<f64>; NUM_JOINTS]; NUM_JETS],
}

/// Columns map turbine thrusts to the world wrench about the CoM:
/// `[axis_i ; (p_i - com) x axis_i]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationMatrix(pub Matrix6x4<f64>);

impl AllocationMatrix {
    pub fn wrench(&self, thrusts: &Vector4<f64>) -> Vector6<f64> {
        self.0 * thrusts
    }
}

/// CoM position and momentum plus base orientation; the controller state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CentroidalState {
    /// m, world
    pub com_position: Vector3<f64>,
    /// kg m/s
    pub lin_momentum: Vector3<f64>,
    /// (yaw, pitch, roll), rad
    pub euler_zyx: Vector3<f64>,
    /// kg m^2/s about the CoM, world frame
    pub ang_momentum: Vector3<f64>,
}

impl CentroidalState {
    pub fn check_pitch_guard(&self, guard: f64) -> Result<()> {
        let pitch = self.euler_zyx[1];
        if !pitch.is_finite() || pitch.abs() >= std::f64::consts::FRAC_PI_2 - guard {
            return Err(Error::Singularity { pitch });
        }
        Ok(())
    }
}

impl RobotModel {
    /// Reference 40 kg configuration shipped with the crate.
    pub fn reference() -> Self {
        RobotConfig::reference().into_model().expect("reference robot config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(domain("mass must be positive"));
        }
        if !(self.gravity_accel > 0.0 && self.gravity_accel.is_finite()) {
            return Err(domain("gravity must be positive"));
        }
        let i = &self.inertia_body;
        if (i - i.transpose()).abs().max() > 1e-12 * i.abs().max().max(1.0) {
            return Err(domain("inertia must be symmetric"));
        }
        if i.cholesky().is_none() {
            return Err(domain("inertia must be positive definite"));
        }
        if self.jets.len() != NUM_JETS {
            return Err(domain(format!("expected {NUM_JETS} jets, got {}", self.jets.len())));
        }
        let mut parents: Vec<MountParent> = self.jets.iter().map(|j| j.parent).collect();
        parents.sort();
        parents.dedup();
        if parents.len() != NUM_JETS {
            return Err(domain("each jet parent must appear exactly once"));
        }
        if self.feet.len() != 2 || self.feet.iter().any(|f| f.contact_points.is_empty()) {
            return Err(domain("expected 2 feet with at least one contact point each"));
        }
        if (0..NUM_JOINTS).any(|j| self.joint_limits.lower[j] > self.joint_limits.upper[j]) {
            return Err(domain("joint lower limit above upper limit"));
        }
        if !(self.rpm_max > 0.0) {
            return Err(domain("rpm_max must be positive"));
        }
        self.turbine.validate()
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity_accel
    }

    pub fn inertia_body_inv(&self) -> Matrix3<f64> {
        self.inertia_body.try_inverse().expect("validated inertia is invertible")
    }

    /// Base-frame jet kinematics and their derivatives w.r.t. the joints.
    pub fn mount_kinematics(&self, q: &JointConfig) -> Result<MountKinematics> {
        q.check_limits(&self.joint_limits)?;
        let zero = Vector3::zeros();
        let mut k = MountKinematics {
            positions: [zero; NUM_JETS],
            axes: [zero; NUM_JETS],
            d_positions: [[zero; NUM_JOINTS]; NUM_JETS],
            d_axes: [[zero; NUM_JOINTS]; NUM_JETS],
        };
        for (i, mount) in self.jets.iter().enumerate() {
            let t_fix = mount.fixed_transform.translation.vector;
            let r_fix = *mount.fixed_transform.rotation.to_rotation_matrix().matrix();
            let nozzle_axis = rot_y(mount.tilt) * r_fix * mount.thrust_axis_local.into_inner();
            match mount.parent.joints() {
                Some((jp, jr)) => {
                    let side = if mount.parent == MountParent::LeftArm { 0 } else { 1 };
                    let (qp, qr) = (q.angles[jp], q.angles[jr]);
                    let r = rot_y(qp) * rot_x(qr);
                    let dr_p = d_rot_y(qp) * rot_x(qr);
                    let dr_r = rot_y(qp) * d_rot_x(qr);
                    k.positions[i] = self.shoulders[side] + r * t_fix;
                    k.axes[i] = r * nozzle_axis;
                    k.d_positions[i][jp] = dr_p * t_fix;
                    k.d_positions[i][jr] = dr_r * t_fix;
                    k.d_axes[i][jp] = dr_p * nozzle_axis;
                    k.d_axes[i][jr] = dr_r * nozzle_axis;
                }
                None => {
                    k.positions[i] = t_fix;
                    k.axes[i] = nozzle_axis;
                }
            }
        }
        Ok(k)
    }

    /// Wrench map in the base frame about the nominal CoM (`W_b`). The world
    /// map is `blockdiag(R, R) * W_b` whenever the CoM sits at its offset.
    pub fn body_wrench_map(&self, q: &JointConfig) -> Result<Matrix6x4<f64>> {
        let k = self.mount_kinematics(q)?;
        let mut w = Matrix6x4::zeros();
        for i in 0..NUM_JETS {
            let r = k.positions[i] - self.com_offset;
            w.fixed_view_mut::<3, 1>(0, i).copy_from(&k.axes[i]);
            w.fixed_view_mut::<3, 1>(3, i).copy_from(&r.cross(&k.axes[i]));
        }
        Ok(w)
    }

    /// `d(W_b * thrusts)/dq`, base frame.
    pub fn body_wrench_jacobian(&self, q: &JointConfig, thrusts: &Vector4<f64>) -> Result<Matrix6x4<f64>> {
        let k = self.mount_kinematics(q)?;
        Ok(wrench_jacobian(&k, &Matrix3::identity(), &self.com_offset, &Vector3::zeros(), thrusts))
    }

    /// World-frame CoM for a base pose under the constant-offset model.
    pub fn com_from_base(&self, base: &Isometry3<f64>) -> Vector3<f64> {
        base.translation.vector + base.rotation * self.com_offset
    }

    /// Base pose whose CoM lands at `com` with the given orientation.
    pub fn base_from_com(&self, com: &Vector3<f64>, rotation: &UnitQuaternion<f64>) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(com - rotation * self.com_offset), *rotation)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RobotConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.into_model()
    }
}

// Shared by the base-frame and world-frame Jacobians. `base_origin` and `com`
// are world vectors; with `rot = I`, `base_origin = 0` and `com` the offset
// this is the base-frame version.
fn wrench_jacobian(
    k: &MountKinematics,
    rot: &Matrix3<f64>,
    com: &Vector3<f64>,
    base_origin: &Vector3<f64>,
    thrusts: &Vector4<f64>,
) -> Matrix6x4<f64> {
    let mut jac = Matrix6x4::zeros();
    for i in 0..NUM_JETS {
        if thrusts[i] == 0.0 {
            continue;
        }
        let a_world = rot * k.axes[i];
        let r = base_origin + rot * k.positions[i] - com;
        for j in 0..NUM_JOINTS {
            let da = rot * k.d_axes[i][j];
            let dp = rot * k.d_positions[i][j];
            let df = da * thrusts[i];
            let dt = (dp.cross(&a_world) + r.cross(&da)) * thrusts[i];
            for row in 0..3 {
                jac[(row, j)] += df[row];
                jac[(row + 3, j)] += dt[row];
            }
        }
    }
    jac
}

/// World poses of the four nozzles.
pub fn jet_world_poses(model: &RobotModel, q: &JointConfig, base: &Isometry3<f64>) -> Result<[JetPose; NUM_JETS]> {
    let k = model.mount_kinematics(q)?;
    Ok(std::array::from_fn(|i| JetPose {
        position: (base * Point3::from(k.positions[i])).coords,
        axis: base.rotation * k.axes[i],
    }))
}

/// Wrench map for the current configuration about an arbitrary `com`.
pub fn allocation_matrix(
    model: &RobotModel,
    q: &JointConfig,
    base: &Isometry3<f64>,
    com: &Vector3<f64>,
) -> Result<AllocationMatrix> {
    let poses = jet_world_poses(model, q, base)?;
    Ok(allocation_from_poses(&poses, com))
}

pub fn allocation_from_poses(poses: &[JetPose], com: &Vector3<f64>) -> AllocationMatrix {
    let mut a = Matrix6x4::zeros();
    for (i, p) in poses.iter().enumerate() {
        a.fixed_view_mut::<3, 1>(0, i).copy_from(&p.axis);
        a.fixed_view_mut::<3, 1>(3, i).copy_from(&(p.position - com).cross(&p.axis));
    }
    AllocationMatrix(a)
}

/// Rate of change of the centroidal momentum: `A*T` minus the share
/// `alpha` of the body weight carried by the turbines.
pub fn centroidal_rhs(a: &AllocationMatrix, thrusts: &Vector4<f64>, model: &RobotModel, alpha: f64) -> Result<Vector6<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(domain(format!("alpha {alpha} outside [0, 1]")));
    }
    if thrusts.iter().any(|t| !(*t >= 0.0)) {
        return Err(domain("thrusts must be non-negative"));
    }
    let mut rhs = a.wrench(thrusts);
    rhs[2] -= alpha * model.weight();
    Ok(rhs)
}

/// `d(A(q)*T)/dq` at fixed thrusts, base pose and CoM.
pub fn linearize_allocation(
    model: &RobotModel,
    q: &JointConfig,
    base: &Isometry3<f64>,
    com: &Vector3<f64>,
    thrusts: &Vector4<f64>,
) -> Result<Matrix6x4<f64>> {
    let k = model.mount_kinematics(q)?;
    let rot = *base.rotation.to_rotation_matrix().matrix();
    Ok(wrench_jacobian(&k, &rot, com, &base.translation.vector, thrusts))
}

// ---------------------------------------------------------------------------
// Declarative configuration
// ---------------------------------------------------------------------------

/// On-disk robot description (TOML). Units are in the key suffixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub schema_version: u32,
    pub mass_kg: f64,
    pub gravity_mps2: f64,
    /// Row-major 3x3, kg m^2.
    pub inertia_kgm2: [[f64; 3]; 3],
    pub com_offset_m: [f64; 3],
    pub shoulders: ShoulderConfig,
    pub joints: JointLimitConfig,
    pub turbine: TurbineConfig,
    pub jets: Vec<JetMountConfig>,
    pub feet: Vec<FootConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShoulderConfig {
    pub left_m: [f64; 3],
    pub right_m: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimitConfig {
    pub lower_rad: [f64; 4],
    pub upper_rad: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbineConfig {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c: f64,
    pub idle_thrust_n: f64,
    pub rpm_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JetMountConfig {
    pub parent: MountParent,
    pub translation_m: [f64; 3],
    /// Roll, pitch, yaw of the fixed transform, rad.
    #[serde(default)]
    pub rotation_rpy_rad: [f64; 3],
    #[serde(default)]
    pub tilt_rad: f64,
    pub thrust_axis: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootConfig {
    pub contact_points_m: Vec<[f64; 3]>,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}

impl RobotConfig {
    pub fn reference() -> Self {
        let jc = JetCoefficients::reference();
        let foot = |y: f64| FootConfig {
            contact_points_m: vec![
                [0.12, y + 0.04, -0.6],
                [0.12, y - 0.04, -0.6],
                [-0.06, y + 0.04, -0.6],
                [-0.06, y - 0.04, -0.6],
            ],
        };
        let tilt = 10f64.to_radians();
        let mount = |parent, translation_m, tilt_rad| JetMountConfig {
            parent,
            translation_m,
            rotation_rpy_rad: [0.0; 3],
            tilt_rad,
            thrust_axis: [0.0, 0.0, 1.0],
        };
        Self {
            schema_version: ROBOT_SCHEMA_VERSION,
            mass_kg: 40.0,
            gravity_mps2: 9.81,
            inertia_kgm2: [[2.0, 0.0, 0.0], [0.0, 1.5, 0.0], [0.0, 0.0, 1.0]],
            com_offset_m: [0.0, 0.0, 0.1],
            shoulders: ShoulderConfig { left_m: [0.0, 0.18, 0.45], right_m: [0.0, -0.18, 0.45] },
            joints: JointLimitConfig { lower_rad: [-0.8, -0.5, -0.8, -0.5], upper_rad: [0.8, 0.5, 0.8, 0.5] },
            turbine: TurbineConfig {
                a1: jc.a1,
                a2: jc.a2,
                b1: jc.b1,
                b2: jc.b2,
                c: jc.c,
                idle_thrust_n: jc.idle_thrust,
                rpm_max: 130_000.0,
            },
            jets: vec![
                mount(MountParent::LeftArm, [0.1, 0.1, -0.25], 0.0),
                mount(MountParent::RightArm, [0.1, -0.1, -0.25], 0.0),
                mount(MountParent::JetpackLeft, [-0.12, 0.1, 0.3], tilt),
                mount(MountParent::JetpackRight, [-0.12, -0.1, 0.3], tilt),
            ],
            feet: vec![foot(0.1), foot(-0.1)],
        }
    }

    pub fn into_model(self) -> Result<RobotModel> {
        if self.schema_version != ROBOT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "robot schema_version {} unsupported (expected {ROBOT_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let jets = self
            .jets
            .iter()
            .map(|j| {
                let axis = v3(j.thrust_axis);
                if (axis.norm() - 1.0).abs() > 1e-9 {
                    return Err(domain(format!("thrust axis of {:?} must be unit length", j.parent)));
                }
                let [r, p, y] = j.rotation_rpy_rad;
                Ok(JetMount {
                    parent: j.parent,
                    fixed_transform: Isometry3::from_parts(
                        Translation3::from(v3(j.translation_m)),
                        UnitQuaternion::from_euler_angles(r, p, y),
                    ),
                    tilt: j.tilt_rad,
                    thrust_axis_local: Unit::new_normalize(axis),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = RobotModel {
            mass: self.mass_kg,
            inertia_body: Matrix3::from_row_slice(&self.inertia_kgm2.concat()),
            gravity_accel: self.gravity_mps2,
            com_offset: v3(self.com_offset_m),
            shoulders: [v3(self.shoulders.left_m), v3(self.shoulders.right_m)],
            joint_limits: JointLimits {
                lower: Vector4::from(self.joints.lower_rad),
                upper: Vector4::from(self.joints.upper_rad),
            },
            jets,
            feet: self
                .feet
                .iter()
                .map(|f| FootGeometry { contact_points: f.contact_points_m.iter().map(|p| v3(*p)).collect() })
                .collect(),
            turbine: JetCoefficients {
                a1: self.turbine.a1,
                a2: self.turbine.a2,
                b1: self.turbine.b1,
                b2: self.turbine.b2,
                c: self.turbine.c,
                idle_thrust: self.turbine.idle_thrust_n,
            },
            rpm_max: self.turbine.rpm_max,
        };
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn untilted() -> RobotModel {
        let mut cfg = RobotConfig::reference();
        for j in &mut cfg.jets {
            j.tilt_rad = 0.0;
        }
        cfg.into_model().unwrap()
    }

    fn random_q(rng: &mut ChaCha8Rng, model: &RobotModel) -> JointConfig {
        let l = &model.joint_limits;
        JointConfig::new(Vector4::from_fn(|j, _| rng.random_range(l.lower[j]..l.upper[j])))
    }

    fn random_base(rng: &mut ChaCha8Rng) -> Isometry3<f64> {
        let t = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let r = UnitQuaternion::from_euler_angles(
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
            rng.random_range(-3.0..3.0),
        );
        Isometry3::from_parts(Translation3::from(t), r)
    }

    fn homogeneous(rot: Matrix3<f64>, t: Vector3<f64>) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        m
    }

    /// Builds the chain from explicit 4x4 transforms, one joint at a time.
    fn chain_oracle(model: &RobotModel, q: &JointConfig, base: &Isometry3<f64>) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        let t_base = base.to_homogeneous();
        model
            .jets
            .iter()
            .map(|m| {
                let mut t = t_base;
                if let Some((jp, jr)) = m.parent.joints() {
                    let side = if m.parent == MountParent::LeftArm { 0 } else { 1 };
                    t *= homogeneous(Matrix3::identity(), model.shoulders[side]);
                    let pitch = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), q.angles[jp]);
                    let roll = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), q.angles[jr]);
                    t *= homogeneous(*pitch.to_rotation_matrix().matrix(), Vector3::zeros());
                    t *= homogeneous(*roll.to_rotation_matrix().matrix(), Vector3::zeros());
                }
                t *= homogeneous(Matrix3::identity(), m.fixed_transform.translation.vector);
                let tilt = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), m.tilt);
                let rot_nozzle = t.fixed_view::<3, 3>(0, 0).into_owned()
                    * tilt.to_rotation_matrix().matrix()
                    * m.fixed_transform.rotation.to_rotation_matrix().matrix();
                let p = t.fixed_view::<3, 1>(0, 3).into_owned();
                (p, rot_nozzle * m.thrust_axis_local.into_inner())
            })
            .collect()
    }

    #[test]
    fn reference_model_is_valid() {
        let m = RobotModel::reference();
        assert_eq!(m.jets.len(), 4);
        assert_eq!(m.mass, 40.0);
        assert_relative_eq!(m.jets[2].tilt, 10f64.to_radians());
    }

    #[test]
    fn identity_chain_gives_vertical_axes() {
        let m = untilted();
        let poses = jet_world_poses(&m, &JointConfig::zero(), &Isometry3::identity()).unwrap();
        for p in poses {
            assert_relative_eq!(p.axis, Vector3::z(), epsilon = 1e-15);
        }
    }

    #[test]
    fn shoulder_pitch_rotates_axis_into_sagittal_plane() {
        let m = untilted();
        let q = JointConfig::new(Vector4::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0));
        let mut limits = m.joint_limits;
        limits.upper[0] = 2.0;
        let m = RobotModel { joint_limits: limits, ..m };
        let poses = jet_world_poses(&m, &q, &Isometry3::identity()).unwrap();
        assert_relative_eq!(poses[0].axis, Vector3::x(), epsilon = 1e-15);
        // other arm untouched
        assert_relative_eq!(poses[1].axis, Vector3::z(), epsilon = 1e-15);
    }

    #[test]
    fn out_of_limit_joint_is_domain_error() {
        let m = RobotModel::reference();
        let q = JointConfig::new(Vector4::new(0.0, 0.0, 1.5, 0.0));
        assert!(matches!(jet_world_poses(&m, &q, &Isometry3::identity()), Err(Error::Domain(_))));
    }

    #[test]
    fn world_poses_match_transform_chain() {
        let m = RobotModel::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let q = random_q(&mut rng, &m);
            let base = random_base(&mut rng);
            let poses = jet_world_poses(&m, &q, &base).unwrap();
            for (pose, (p, a)) in poses.iter().zip(chain_oracle(&m, &q, &base)) {
                assert_relative_eq!(pose.position, p, epsilon = 1e-12);
                assert_relative_eq!(pose.axis, a, epsilon = 1e-12);
                assert!((pose.axis.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jetpack_independent_of_joints() {
        let m = RobotModel::reference();
        let a = jet_world_poses(&m, &JointConfig::zero(), &Isometry3::identity()).unwrap();
        let b = jet_world_poses(&m, &JointConfig::new(Vector4::new(0.5, -0.3, 0.2, 0.4)), &Isometry3::identity()).unwrap();
        assert_eq!(a[2], b[2]);
        assert_eq!(a[3], b[3]);
    }

    #[test]
    fn allocation_columns_by_hand() {
        let com = Vector3::new(0.3, -0.2, 1.0);
        let at_com = allocation_from_poses(&[JetPose { position: com, axis: Vector3::z() }], &com);
        assert_eq!(at_com.0.column(0).into_owned(), Vector6::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0));
        let offset = allocation_from_poses(&[JetPose { position: com + Vector3::x(), axis: Vector3::z() }], &com);
        assert_eq!(offset.0.column(0).into_owned(), Vector6::new(0.0, 0.0, 1.0, 0.0, -1.0, 0.0));
    }

    #[test]
    fn allocation_equals_sum_of_jet_wrenches() {
        let m = RobotModel::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let q = random_q(&mut rng, &m);
            let base = random_base(&mut rng);
            let com = m.com_from_base(&base);
            let t = Vector4::from_fn(|_, _| rng.random_range(0.0..250.0));
            let a = allocation_matrix(&m, &q, &base, &com).unwrap();
            let mut expected = Vector6::zeros();
            for (i, (p, axis)) in chain_oracle(&m, &q, &base).into_iter().enumerate() {
                let f = axis * t[i];
                let tau = (p - com).cross(&f);
                expected += Vector6::new(f.x, f.y, f.z, tau.x, tau.y, tau.z);
            }
            assert_relative_eq!(a.wrench(&t), expected, epsilon = 1e-9);
            for i in 0..4 {
                assert!((a.0.fixed_view::<3, 1>(0, i).norm() - 1.0).abs() < 1e-12);
            }
            // body map agrees with the world map at the nominal CoM
            let rot = *base.rotation.to_rotation_matrix().matrix();
            let w = m.body_wrench_map(&q).unwrap() * t;
            let f = rot * w.fixed_rows::<3>(0);
            let tau = rot * w.fixed_rows::<3>(3);
            assert_relative_eq!(Vector6::new(f.x, f.y, f.z, tau.x, tau.y, tau.z), expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn rhs_cases() {
        let m = RobotModel::reference();
        let a = allocation_matrix(&m, &JointConfig::zero(), &Isometry3::identity(), &m.com_offset).unwrap();
        assert_eq!(centroidal_rhs(&a, &Vector4::zeros(), &m, 0.0).unwrap(), Vector6::zeros());
        let half = centroidal_rhs(&a, &Vector4::zeros(), &m, 0.5).unwrap();
        assert_relative_eq!(half, Vector6::new(0.0, 0.0, -196.2, 0.0, 0.0, 0.0), epsilon = 1e-12);

        let vertical = untilted();
        let a = allocation_matrix(&vertical, &JointConfig::zero(), &Isometry3::identity(), &vertical.com_offset).unwrap();
        let t = Vector4::repeat(vertical.weight() / 4.0);
        assert!(centroidal_rhs(&a, &t, &vertical, 1.0).unwrap()[2].abs() < 1e-12);

        assert!(matches!(centroidal_rhs(&a, &t, &vertical, 1.2), Err(Error::Domain(_))));
        assert!(matches!(centroidal_rhs(&a, &Vector4::new(1.0, -1.0, 0.0, 0.0), &vertical, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn rhs_is_linear_in_thrust_and_affine_in_alpha() {
        let m = RobotModel::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let q = random_q(&mut rng, &m);
            let base = random_base(&mut rng);
            let a = allocation_matrix(&m, &q, &base, &m.com_from_base(&base)).unwrap();
            let t = Vector4::from_fn(|_, _| rng.random_range(0.0..100.0));
            let alpha = rng.random_range(0.0..1.0);
            let c = rng.random_range(0.0..2.5);
            let zero = centroidal_rhs(&a, &Vector4::zeros(), &m, alpha).unwrap();
            let lhs = centroidal_rhs(&a, &(t * c), &m, alpha).unwrap() - zero;
            let rhs = (centroidal_rhs(&a, &t, &m, alpha).unwrap() - zero) * c;
            assert_relative_eq!(lhs, rhs, epsilon = 1e-9);

            let d = centroidal_rhs(&a, &t, &m, 1.0).unwrap() - centroidal_rhs(&a, &t, &m, 0.0).unwrap();
            assert_relative_eq!(d, Vector6::new(0.0, 0.0, -m.weight(), 0.0, 0.0, 0.0), epsilon = 1e-12 * m.weight());
        }
    }

    #[test]
    fn allocation_jacobian_zero_cases() {
        let m = RobotModel::reference();
        let q = JointConfig::new(Vector4::new(0.1, 0.2, -0.3, 0.1));
        let base = Isometry3::identity();
        let com = m.com_from_base(&base);
        assert_eq!(linearize_allocation(&m, &q, &base, &com, &Vector4::zeros()).unwrap(), Matrix6x4::zeros());
        let jetpack_only = Vector4::new(0.0, 0.0, 100.0, 120.0);
        assert_eq!(linearize_allocation(&m, &q, &base, &com, &jetpack_only).unwrap(), Matrix6x4::zeros());
    }

    #[test]
    fn allocation_jacobian_matches_finite_differences() {
        let m = RobotModel::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-6;
        for _ in 0..100 {
            // keep clear of the limits so the stencil stays valid
            let q = JointConfig::new(random_q(&mut rng, &m).angles * 0.9);
            let base = random_base(&mut rng);
            let com = m.com_from_base(&base);
            let t = Vector4::from_fn(|_, _| rng.random_range(0.0..250.0));
            let jac = linearize_allocation(&m, &q, &base, &com, &t).unwrap();
            let mut fd = Matrix6x4::zeros();
            for j in 0..4 {
                let mut qp = q;
                let mut qm = q;
                qp.angles[j] += h;
                qm.angles[j] -= h;
                let wp = allocation_matrix(&m, &qp, &base, &com).unwrap().wrench(&t);
                let wm = allocation_matrix(&m, &qm, &base, &com).unwrap().wrench(&t);
                fd.set_column(j, &((wp - wm) / (2.0 * h)));
            }
            let rel = (jac - fd).norm() / fd.norm().max(1e-12);
            assert!(rel < 1e-4, "relative error {rel}");
        }
    }

    #[test]
    fn toml_roundtrip_and_schema_version() {
        let cfg = RobotConfig::reference();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RobotModel::from_toml_str(&text).unwrap(), RobotModel::reference());
        let bad = text.replace("schema_version = 1", "schema_version = 7");
        assert!(matches!(RobotModel::from_toml_str(&bad), Err(Error::Config(_))));
        let missing = text.replace("schema_version = 1\n", "");
        assert!(matches!(RobotModel::from_toml_str(&missing), Err(Error::Config(_))));
    }

    #[test]
    fn pitch_guard() {
        let mut s = CentroidalState::default();
        s.euler_zyx[1] = 1.2;
        assert!(s.check_pitch_guard(0.2).is_ok());
        s.euler_zyx[1] = -1.4;
        assert!(matches!(s.check_pitch_guard(0.2), Err(Error::Singularity { .. })));
    }
}
