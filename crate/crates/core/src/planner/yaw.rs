//! Yaw reference: rest-to-rest quintics on the turning segments, constants elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `psi(t) = sum_i c_i t^i` on `[0, duration]`, clamped outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YawPolynomial {
    pub coeffs: [f64; 6],
    pub duration: f64,
}

impl YawPolynomial {
    pub fn constant(psi: f64, duration: f64) -> Self {
        Self { coeffs: [psi, 0.0, 0.0, 0.0, 0.0, 0.0], duration }
    }

    /// Quintic from `psi0` to `psi1` with zero rate and acceleration at both ends.
    pub fn rest_to_rest(psi0: f64, psi1: f64, duration: f64) -> Self {
        let d = psi1 - psi0;
        let t3 = duration.powi(3);
        Self {
            coeffs: [psi0, 0.0, 0.0, 10.0 * d / t3, -15.0 * d / (t3 * duration), 6.0 * d / (t3 * duration * duration)],
            duration,
        }
    }

    /// `(psi, psi_dot, psi_ddot)` at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let t = t.clamp(0.0, self.duration);
        let c = &self.coeffs;
        let mut psi = 0.0;
        let mut dpsi = 0.0;
        let mut ddpsi = 0.0;
        for i in (0..6).rev() {
            psi = psi * t + c[i];
        }
        for i in (1..6).rev() {
            dpsi = dpsi * t + i as f64 * c[i];
        }
        for i in (2..6).rev() {
            ddpsi = ddpsi * t + (i * (i - 1)) as f64 * c[i];
        }
        (psi, dpsi, ddpsi)
    }
}

/// Yaw setpoints at the start (A), the grasp (C) and the release (E).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YawWaypoints {
    pub start: f64,
    pub grasp: f64,
    pub release: f64,
}

pub fn plan_yaw(durations: &[f64; 5], wp: &YawWaypoints) -> Result<[YawPolynomial; 5]> {
    if let Some(bad) = durations.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Error::invalid(format!("segment duration must be positive, got {bad}")));
    }
    Ok([
        YawPolynomial::rest_to_rest(wp.start, wp.grasp, durations[0]),
        YawPolynomial::constant(wp.grasp, durations[1]),
        YawPolynomial::rest_to_rest(wp.grasp, wp.release, durations[2]),
        YawPolynomial::constant(wp.release, durations[3]),
        YawPolynomial::constant(wp.release, durations[4]),
    ])
}

/// `target` shifted by a multiple of 2 pi to lie within pi of `reference`.
pub fn unwrap_near(target: f64, reference: f64) -> f64 {
    reference + crate::so3::wrap_angle(target - reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{SMatrix, SVector};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn matches_linear_system_oracle() {
        let t = 2.0;
        let poly = YawPolynomial::rest_to_rest(0.0, FRAC_PI_2, t);
        // Rows: psi, psi', psi'' at 0 and at T.
        let mut m = SMatrix::<f64, 6, 6>::zeros();
        for i in 0..6 {
            m[(3, i)] = t.powi(i as i32);
            if i >= 1 {
                m[(4, i)] = i as f64 * t.powi(i as i32 - 1);
            }
            if i >= 2 {
                m[(5, i)] = (i * (i - 1)) as f64 * t.powi(i as i32 - 2);
            }
        }
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        m[(2, 2)] = 2.0;
        let rhs = SVector::<f64, 6>::from_row_slice(&[0.0, 0.0, 0.0, FRAC_PI_2, 0.0, 0.0]);
        let c = m.lu().solve(&rhs).unwrap();
        for i in 0..6 {
            assert!((c[i] - poly.coeffs[i]).abs() < 1e-12);
        }
        assert!((poly.eval(1.0).0 - FRAC_PI_2 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_rates_vanish() {
        let poly = YawPolynomial::rest_to_rest(-0.4, 2.1, 3.3);
        for t in [0.0, 3.3] {
            let (_, d, dd) = poly.eval(t);
            assert!(d.abs() < 1e-10 && dd.abs() < 1e-10);
        }
        assert!((poly.eval(3.3).0 - 2.1).abs() < 1e-12);
    }

    #[test]
    fn equal_endpoints_give_constant() {
        let poly = YawPolynomial::rest_to_rest(0.7, 0.7, 1.5);
        for t in [0.0, 0.4, 1.5] {
            assert_eq!(poly.eval(t), (0.7, 0.0, 0.0));
        }
    }

    #[test]
    fn plan_is_continuous() {
        let d = [1.0, 2.0, 3.0, 1.5, 2.5];
        let wp = YawWaypoints { start: 0.2, grasp: -1.0, release: 2.0 };
        let polys = plan_yaw(&d, &wp).unwrap();
        for i in 0..4 {
            assert!((polys[i].eval(d[i]).0 - polys[i + 1].eval(0.0).0).abs() < 1e-12);
        }
        assert!(plan_yaw(&[1.0, 0.0, 1.0, 1.0, 1.0], &wp).is_err());
    }
}
