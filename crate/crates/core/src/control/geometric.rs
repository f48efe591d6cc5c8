//! Robust geometric tracking controller on SO(3) with bounded disturbance
//! rejection terms, and the payload gravity feedforward.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{attitude_from_thrust, ControlInput, QuadState, SystemParams};
use crate::so3::{attitude_error, hat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeomGains {
    pub k_r: f64,
    pub k_v: f64,
    #[serde(rename = "k_R")]
    pub k_rot: f64,
    pub k_omega: f64,
    pub c1: f64,
    pub c2: f64,
    pub eps_r: f64,
    #[serde(rename = "eps_R")]
    pub eps_rot: f64,
    pub kappa: f64,
    /// Bound on the translational disturbance force [N].
    pub delta_r: f64,
    /// Bound on the rotational disturbance torque [N m].
    #[serde(rename = "delta_R")]
    pub delta_rot: f64,
}

impl Default for GeomGains {
    fn default() -> Self {
        Self {
            k_r: 6.0,
            k_v: 3.0,
            k_rot: 1.0,
            k_omega: 0.2,
            c1: 1.0,
            c2: 1e-3,
            eps_r: 1e-4,
            eps_rot: 1e-4,
            kappa: 3.0,
            delta_r: 0.28,
            delta_rot: 0.011,
        }
    }
}

impl GeomGains {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.k_r,
            self.k_v,
            self.k_rot,
            self.k_omega,
            self.c1,
            self.c2,
            self.eps_r,
            self.eps_rot,
            self.delta_r,
            self.delta_rot,
        ];
        if all.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("geometric gains must be positive"));
        }
        if !(self.kappa > 2.0) {
            return Err(Error::invalid(format!("kappa must exceed 2, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Desired position, attitude and their derivatives for one control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingReference {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub rot: Matrix3<f64>,
    pub omega: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
}

/// `-delta^(k+2) e |e|^k / (delta^(k+1) |e|^(k+1) + eps^(k+1))`, bounded by `delta`.
pub fn robust_position_term(e_b: &Vector3<f64>, g: &GeomGains) -> Vector3<f64> {
    let n = e_b.norm();
    if n == 0.0 {
        return Vector3::zeros();
    }
    let k = g.kappa;
    let num = g.delta_r.powf(k + 2.0) * n.powf(k);
    let den = g.delta_r.powf(k + 1.0) * n.powf(k + 1.0) + g.eps_r.powf(k + 1.0);
    -e_b * (num / den)
}

/// `-delta^2 e / (delta |e| + eps)`, bounded by `delta`.
pub fn robust_attitude_term(e_a: &Vector3<f64>, g: &GeomGains) -> Vector3<f64> {
    -e_a * (g.delta_rot * g.delta_rot / (g.delta_rot * e_a.norm() + g.eps_rot))
}

/// Position-loop force vector `-k_r e_r - k_v e_v + m g e3 + m a_d + mu_r`.
pub fn desired_force(
    state: &QuadState,
    pos: &Vector3<f64>,
    vel: &Vector3<f64>,
    acc: &Vector3<f64>,
    g: &GeomGains,
    p: &SystemParams,
) -> Vector3<f64> {
    let e_r = state.r - pos;
    let e_v = state.v - vel;
    let e_b = e_v + e_r * (g.c1 / p.mass);
    -e_r * g.k_r - e_v * g.k_v + Vector3::z() * (p.mass * p.gravity) + acc * p.mass + robust_position_term(&e_b, g)
}

/// Commanded attitude aligning the body thrust axis with the desired force at yaw `psi_d`.
pub fn desired_attitude(
    state: &QuadState,
    pos: &Vector3<f64>,
    vel: &Vector3<f64>,
    acc: &Vector3<f64>,
    psi_d: f64,
    g: &GeomGains,
    p: &SystemParams,
) -> Result<Matrix3<f64>> {
    attitude_from_thrust(&desired_force(state, pos, vel, acc, g, p), psi_d)
}

/// Thrust and body torque of the robust geometric tracking law.
pub fn geometric_control(
    state: &QuadState,
    reference: &TrackingReference,
    g: &GeomGains,
    p: &SystemParams,
) -> ControlInput {
    let j = p.inertia();
    let f_d = desired_force(state, &reference.pos, &reference.vel, &reference.acc, g, p);
    let thrust = f_d.dot(&(state.rot * Vector3::z()));

    let rel = state.rot.transpose() * reference.rot;
    let e_rot = attitude_error(&state.rot, &reference.rot);
    let e_omega = state.omega - rel * reference.omega;
    let e_a = e_omega + p.inertia_inv() * e_rot * g.c2;
    let torque = -e_rot * g.k_rot - e_omega * g.k_omega + state.omega.cross(&(j * state.omega))
        - j * (hat(&state.omega) * rel * reference.omega - rel * reference.omega_dot)
        + robust_attitude_term(&e_a, g);
    ControlInput::new(thrust, torque)
}

/// Adds the gravity load of the carried payload along the body thrust axis.
pub fn feedforward_thrust(thrust: f64, rot: &Matrix3<f64>, p: &SystemParams) -> f64 {
    thrust + p.payload_mass * p.gravity * rot[(2, 2)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{euler_to_rot, rot_y};

    fn hover_ref(pos: Vector3<f64>) -> TrackingReference {
        TrackingReference {
            pos,
            vel: Vector3::zeros(),
            acc: Vector3::zeros(),
            rot: Matrix3::identity(),
            omega: Vector3::zeros(),
            omega_dot: Vector3::zeros(),
        }
    }

    #[test]
    fn perfect_hover_tracking_gives_weight_and_no_torque() {
        let p = SystemParams::hook_platform();
        let s = QuadState::hover_at(Vector3::new(0.2, 0.0, 1.0));
        let u = geometric_control(&s, &hover_ref(s.r), &GeomGains::default(), &p);
        assert!((u.thrust - 0.605 * 9.81).abs() < 1e-12);
        assert!((u.thrust - 5.93505).abs() < 1e-9);
        assert!(u.torque.norm() < 1e-15);
    }

    #[test]
    fn feedforward_cases() {
        let p = SystemParams::hook_platform().with_payload(0.075);
        assert!((feedforward_thrust(1.0, &Matrix3::identity(), &p) - 1.0 - 0.73575).abs() < 1e-12);
        assert!((feedforward_thrust(1.0, &rot_y(std::f64::consts::FRAC_PI_2), &p) - 1.0).abs() < 1e-12);
        let bare = SystemParams::hook_platform();
        assert_eq!(feedforward_thrust(2.5, &Matrix3::identity(), &bare), 2.5);
    }

    #[test]
    fn robust_terms_oppose_error_and_stay_bounded() {
        let g = GeomGains::default();
        for scale in [1e-8, 1e-5, 1e-3, 0.1, 10.0, 1e4] {
            let e = Vector3::new(0.3, -1.0, 0.7) * scale;
            let mu = robust_position_term(&e, &g);
            assert!(mu.norm() <= g.delta_r * (1.0 + 1e-12));
            assert!(mu.dot(&e) <= 0.0);
            let mr = robust_attitude_term(&e, &g);
            assert!(mr.norm() <= g.delta_rot * (1.0 + 1e-12));
        }
        assert_eq!(robust_position_term(&Vector3::zeros(), &g), Vector3::zeros());
    }

    #[test]
    fn attitude_error_vanishes_on_reference_and_flips_on_swap() {
        let a = euler_to_rot(&Vector3::new(0.2, -0.1, 0.9));
        let b = euler_to_rot(&Vector3::new(-0.3, 0.25, 0.1));
        assert!(attitude_error(&a, &a).norm() < 1e-15);
        assert!((attitude_error(&a, &b) + attitude_error(&b, &a)).norm() < 1e-14);
    }

    #[test]
    fn position_error_tilts_thrust_towards_reference() {
        let p = SystemParams::hook_platform();
        let s = QuadState::hover_at(Vector3::zeros());
        let rd = desired_attitude(
            &s,
            &Vector3::new(1.0, 0.0, 0.0),
            &Vector3::zeros(),
            &Vector3::zeros(),
            0.0,
            &GeomGains::default(),
            &p,
        )
        .unwrap();
        assert!(rd[(0, 2)] > 0.0, "thrust axis leans towards +x");
    }
}
