//! Rotation helpers shared by the model, estimators and controller.
//!
//! Euler angles are stored as `(yaw, pitch, roll)` and follow the ZYX
//! convention `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

pub fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

pub fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Rotation matrix of ZYX Euler angles `(yaw, pitch, roll)`.
pub fn euler_to_rotation(e: &Vector3<f64>) -> Matrix3<f64> {
    rot_z(e[0]) * rot_y(e[1]) * rot_x(e[2])
}

/// Partial derivatives of [`euler_to_rotation`] w.r.t. yaw, pitch and roll.
pub fn euler_rotation_partials(e: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (rz, ry, rx) = (rot_z(e[0]), rot_y(e[1]), rot_x(e[2]));
    [
        d_rot_z(e[0]) * ry * rx,
        rz * d_rot_y(e[1]) * rx,
        rz * ry * d_rot_x(e[2]),
    ]
}

/// Maps Euler rates to world-frame angular velocity: `omega = E(e) * e_dot`.
pub fn euler_rate_matrix(e: &Vector3<f64>) -> Matrix3<f64> {
    let (sy, cy) = e[0].sin_cos();
    let (sp, cp) = e[1].sin_cos();
    Matrix3::new(0.0, -sy, cy * cp, 0.0, cy, sy * cp, 1.0, 0.0, -sp)
}

/// Partial derivatives of [`euler_rate_matrix`] w.r.t. yaw, pitch and roll.
pub fn euler_rate_matrix_partials(e: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (sy, cy) = e[0].sin_cos();
    let (sp, cp) = e[1].sin_cos();
    [
        Matrix3::new(0.0, -cy, -sy * cp, 0.0, -sy, cy * cp, 0.0, 0.0, 0.0),
        Matrix3::new(0.0, 0.0, -cy * sp, 0.0, 0.0, -sy * sp, 0.0, 0.0, -cp),
        Matrix3::zeros(),
    ]
}

/// ZYX Euler angles `(yaw, pitch, roll)` of a rotation.
pub fn quaternion_to_euler(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let (roll, pitch, yaw) = q.euler_angles();
    Vector3::new(yaw, pitch, roll)
}

pub fn euler_to_quaternion(e: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(e[2], e[1], e[0])
}

/// Flips the quaternion sign so that the scalar part is non-negative.
pub fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Rotation vector of `q` (axis times angle, angle in `[0, pi]`).
pub fn log_map(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    canonical(*q).scaled_axis()
}

pub fn exp_map(v: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*v)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn euler_roundtrip_matches_nalgebra() {
        let e = Vector3::new(0.3, -0.2, 0.1);
        let r = euler_to_rotation(&e);
        let q = euler_to_quaternion(&e);
        assert_relative_eq!(r, *q.to_rotation_matrix().matrix(), epsilon = 1e-14);
        assert_relative_eq!(quaternion_to_euler(&q), e, epsilon = 1e-12);
    }

    #[test]
    fn rotation_partials_match_finite_differences() {
        let e = Vector3::new(0.7, 0.4, -0.3);
        let partials = euler_rotation_partials(&e);
        let rate_partials = euler_rate_matrix_partials(&e);
        let h = 1e-6;
        for k in 0..3 {
            let mut ep = e;
            let mut em = e;
            ep[k] += h;
            em[k] -= h;
            let fd = (euler_to_rotation(&ep) - euler_to_rotation(&em)) / (2.0 * h);
            assert_relative_eq!(partials[k], fd, epsilon = 1e-8);
            let fd = (euler_rate_matrix(&ep) - euler_rate_matrix(&em)) / (2.0 * h);
            assert_relative_eq!(rate_partials[k], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn euler_rate_matrix_maps_rates_to_angular_velocity() {
        // omega from R_dot * R^T, compared with E(e) * e_dot
        let e = Vector3::new(0.2, 0.5, -0.4);
        let rate = Vector3::new(0.3, -0.1, 0.2);
        let h = 1e-6;
        let r_dot = (euler_to_rotation(&(e + rate * h)) - euler_to_rotation(&(e - rate * h))) / (2.0 * h);
        let w = r_dot * euler_to_rotation(&e).transpose();
        let omega = Vector3::new(w[(2, 1)], w[(0, 2)], w[(1, 0)]);
        assert_relative_eq!(euler_rate_matrix(&e) * rate, omega, epsilon = 1e-8);
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(-0.5), -0.5);
        assert_relative_eq!(wrap_angle(7.0), 7.0 - std::f64::consts::TAU, epsilon = 1e-12);
    }
}
