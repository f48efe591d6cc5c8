//! Rotation helpers: hat/vee maps and the ZYX (yaw-pitch-roll) Euler convention.
//!
//! Body-to-inertial rotation is `R = Rz(psi) * Ry(theta) * Rx(phi)`; body rates
//! relate to Euler rates through `omega = Q(phi, theta) * lambda_dot`.

use nalgebra::{Matrix3, Vector3};

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

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

/// Rotation matrix for Euler angles `(phi, theta, psi)`.
pub fn euler_to_rot(euler: &Vector3<f64>) -> Matrix3<f64> {
    rot_z(euler.z) * rot_y(euler.y) * rot_x(euler.x)
}

/// Inverse of [`euler_to_rot`] for `|theta| < pi/2`.
pub fn rot_to_euler(r: &Matrix3<f64>) -> Vector3<f64> {
    let theta = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let phi = r[(2, 1)].atan2(r[(2, 2)]);
    let psi = r[(1, 0)].atan2(r[(0, 0)]);
    Vector3::new(phi, theta, psi)
}

/// Euler-rate to body-rate map `Q`.
pub fn euler_rate_matrix(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sp, cp) = euler.x.sin_cos();
    let (st, ct) = euler.y.sin_cos();
    Matrix3::new(1.0, 0.0, -st, 0.0, cp, sp * ct, 0.0, -sp, cp * ct)
}

/// Partial derivatives of `Q` with respect to `(phi, theta, psi)`.
pub fn euler_rate_matrix_partials(euler: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (sp, cp) = euler.x.sin_cos();
    let (st, ct) = euler.y.sin_cos();
    let d_phi = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sp, cp * ct, 0.0, -cp, -sp * ct);
    let d_theta = Matrix3::new(0.0, 0.0, -ct, 0.0, 0.0, -sp * st, 0.0, 0.0, -cp * st);
    [d_phi, d_theta, Matrix3::zeros()]
}

/// Partial derivatives of `R` with respect to `(phi, theta, psi)`.
pub fn euler_to_rot_partials(euler: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let rx = rot_x(euler.x);
    let ry = rot_y(euler.y);
    let rz = rot_z(euler.z);
    let e1 = hat(&Vector3::x());
    let e2 = hat(&Vector3::y());
    let e3 = hat(&Vector3::z());
    [rz * ry * rx * e1, rz * ry * e2 * rx, e3 * rz * ry * rx]
}

/// Geodesic-free attitude error `0.5 * vee(Rd^T R - R^T Rd)`.
pub fn attitude_error(r: &Matrix3<f64>, r_d: &Matrix3<f64>) -> Vector3<f64> {
    0.5 * vee(&(r_d.transpose() * r - r.transpose() * r_d))
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}
