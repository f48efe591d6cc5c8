//! Continuous-time algebraic Riccati equation and the hover payload regulator.

use nalgebra::{DMatrix, DVector, SMatrix, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{linearize, ControlInput, FullState, Matrix14, Matrix4x14, SystemParams, Vector14};
use crate::so3::{rot_z, wrap_angle};

/// Relative residual accepted from the Riccati solver.
pub const CARE_TOL: f64 = 1e-9;

/// Sign-function iteration on the Hamiltonian matrix, polished with
/// Newton-Kleinman steps. Returns the stabilizing solution `P` of
/// `A'P + PA - P B R^-1 B' P + Q = 0`.
pub fn solve_care(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let r_inv = r.clone().try_inverse().ok_or_else(|| Error::invalid("R must be invertible"))?;
    let s = b * &r_inv * b.transpose();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut z = h;
    let mut converged = false;
    for _ in 0..100 {
        let lu = z.clone().lu();
        let det = lu.determinant().abs();
        let zi = lu.try_inverse().ok_or(Error::NotStabilizable)?;
        let c = if det > 0.0 && det.is_finite() { det.powf(1.0 / (2 * n) as f64) } else { 1.0 };
        let next = (&z / c + zi * c) * 0.5;
        let change = (&next - &z).norm() / next.norm();
        z = next;
        if !change.is_finite() {
            return Err(Error::NotStabilizable);
        }
        if change < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotStabilizable);
    }
    // The stable subspace is the kernel of sign(H) + I, spanned by [I; P].
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&z.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(z.view((n, n), (n, n)) + DMatrix::identity(n, n)));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(z.view((0, 0), (n, n)) + DMatrix::identity(n, n))));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-z.view((n, 0), (n, n))));
    let p = lhs.svd(true, true).solve(&rhs, 1e-14).map_err(|_| Error::NotStabilizable)?;
    let mut p = (&p + p.transpose()) * 0.5;

    // Newton-Kleinman: solve (A - S P)' X + X (A - S P) = -(Q + P S P).
    for _ in 0..8 {
        if care_residual(a, &s, q, &p) < 1e-14 {
            break;
        }
        let ac = a - &s * &p;
        let m = q + &p * &s * &p;
        let next = solve_lyapunov(&ac, &m)?;
        p = (&next + next.transpose()) * 0.5;
    }
    let residual = care_residual(a, &s, q, &p);
    if !(residual < CARE_TOL) {
        return Err(Error::RiccatiNoConvergence { residual });
    }
    Ok(p)
}

/// `|A'P + PA - P S P + Q| / max(|Q|, |A'P|, 1)` with `S = B R^-1 B'`.
pub fn care_residual(a: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let ap = a.transpose() * p;
    let res = &ap + ap.transpose() - p * s * p + q;
    res.norm() / q.norm().max(ap.norm()).max(1.0)
}

/// Solves `A' X + X A = -M` through its Kronecker form.
pub fn solve_lyapunov(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let at = a.transpose();
    let id = DMatrix::<f64>::identity(n, n);
    let k = id.kronecker(&at) + at.kronecker(&id);
    let rhs = DVector::from_iterator(n * n, m.iter().map(|v| -v));
    let x = k.lu().solve(&rhs).ok_or(Error::NotStabilizable)?;
    Ok(DMatrix::from_column_slice(n, n, x.as_slice()))
}

/// Largest real part among the eigenvalues.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.clone().complex_eigenvalues().iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrWeights {
    pub q: [f64; 14],
    pub r: [f64; 4],
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self {
            q: [10.0, 10.0, 100.0, 0.1, 0.1, 0.1, 0.01, 1.0, 1.0, 10.0, 1.0, 1.0, 1.0, 0.05],
            r: [5.0, 20.0, 20.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrGain {
    pub k: Matrix4x14,
    pub x0: Vector14,
    pub u0: Vector4<f64>,
    /// Riccati solution, a Lyapunov matrix of the linear closed loop.
    pub p: Matrix14,
    pub a: Matrix14,
    pub b: SMatrix<f64, 14, 4>,
}

impl LqrGain {
    pub fn closed_loop(&self) -> Matrix14 {
        self.a - self.b * self.k
    }

    /// Largest real part of the closed-loop eigenvalues; negative when Hurwitz.
    pub fn closed_loop_abscissa(&self) -> f64 {
        spectral_abscissa(&DMatrix::from_column_slice(14, 14, self.closed_loop().as_slice()))
    }
}

/// LQR about hover with the pendulum hanging straight down.
pub fn lqr_design(p: &SystemParams, w: &LqrWeights) -> Result<LqrGain> {
    if w.q.iter().any(|v| !(*v >= 0.0)) || w.r.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("LQR weights: Q must be PSD and R positive definite"));
    }
    let x0 = FullState::default();
    let u0 = ControlInput::hover(p);
    let (a, b) = linearize(&x0, &u0, p)?;
    let ad = DMatrix::from_column_slice(14, 14, a.as_slice());
    let bd = DMatrix::from_column_slice(14, 4, b.as_slice());
    let q = DMatrix::from_diagonal(&DVector::from_row_slice(&w.q));
    let r = DMatrix::from_diagonal(&DVector::from_row_slice(&w.r));
    let pd = solve_care(&ad, &bd, &q, &r)?;
    let kd = r.try_inverse().expect("positive diagonal") * bd.transpose() * &pd;
    let k = Matrix4x14::from_column_slice(kd.as_slice());
    let gain =
        LqrGain { k, x0: x0.to_vector(), u0: u0.as_vector(), p: Matrix14::from_column_slice(pd.as_slice()), a, b };
    if gain.closed_loop_abscissa() >= 0.0 {
        return Err(Error::NotStabilizable);
    }
    Ok(gain)
}

/// `u = u0 - K (x - x0)`.
pub fn lqr_control(state: &FullState, gain: &LqrGain) -> ControlInput {
    ControlInput::from_vector(&(gain.u0 - gain.k * (state.to_vector() - gain.x0)))
}

/// State relative to a hover setpoint at `pos` with yaw `psi`, expressed in
/// the setpoint's yaw frame so the hover design applies at any heading.
pub fn regulator_state(state: &FullState, pos: &Vector3<f64>, psi: f64) -> FullState {
    let rz = rot_z(-psi);
    let mut out = *state;
    out.xi.fixed_rows_mut::<3>(0).copy_from(&(rz * (state.position() - pos)));
    out.xi[5] = wrap_angle(state.xi[5] - psi);
    out.xi_dot.fixed_rows_mut::<3>(0).copy_from(&(rz * state.velocity()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vector7;

    #[test]
    fn scalar_integrator_gain_is_one() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let p = solve_care(&DMatrix::zeros(1, 1), &one, &one, &one).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn double_integrator_matches_closed_form() {
        // x'' = u, Q = I, R = 1: P = [[sqrt3, 1], [1, sqrt3]].
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let p = solve_care(&a, &b, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).unwrap();
        let s3 = 3f64.sqrt();
        let oracle = DMatrix::from_row_slice(2, 2, &[s3, 1.0, 1.0, s3]);
        assert!((p - oracle).amax() < 1e-12);
    }

    #[test]
    fn hover_design_is_stabilizing_with_small_residual() {
        let p = SystemParams::hook_platform().with_payload(0.075);
        let g = lqr_design(&p, &LqrWeights::default()).unwrap();
        let cl = DMatrix::from_column_slice(14, 14, g.closed_loop().as_slice());
        assert!(spectral_abscissa(&cl) < 0.0);
        let a = DMatrix::from_column_slice(14, 14, g.a.as_slice());
        let b = DMatrix::from_column_slice(14, 4, g.b.as_slice());
        let r_inv = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.2, 0.05, 0.05, 0.05]));
        let s = &b * r_inv * b.transpose();
        let q = DMatrix::from_diagonal(&DVector::from_row_slice(&LqrWeights::default().q));
        let pd = DMatrix::from_column_slice(14, 14, g.p.as_slice());
        assert!(care_residual(&a, &s, &q, &pd) < 1e-6);
        assert!((g.u0[0] - p.hover_thrust()).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_returns_u0_and_law_is_affine() {
        let p = SystemParams::hook_platform().with_payload(0.075);
        let g = lqr_design(&p, &LqrWeights::default()).unwrap();
        let u = lqr_control(&FullState::default(), &g);
        assert_eq!(u.as_vector(), g.u0);
        let d = FullState::new(Vector7::from_element(0.01), Vector7::from_element(-0.02));
        let twice = FullState::new(d.xi * 2.0, d.xi_dot * 2.0);
        let du = lqr_control(&d, &g).as_vector() - g.u0;
        let du2 = lqr_control(&twice, &g).as_vector() - g.u0;
        assert!((du2 - du * 2.0).amax() < 1e-12);
    }

    #[test]
    fn swing_feedback_is_nonzero() {
        let g = lqr_design(&SystemParams::hook_platform().with_payload(0.075), &LqrWeights::default()).unwrap();
        assert!(g.k.column(6).amax() > 1e-6);
    }

    #[test]
    fn regulator_state_is_yaw_invariant() {
        let mut s = FullState::default();
        s.xi[0] = 1.0;
        s.xi[5] = 0.5;
        let rel = regulator_state(&s, &Vector3::new(1.0, -1.0, 0.0), 0.5);
        assert!((rel.position() - Vector3::new(0.5f64.sin(), 0.5f64.cos(), 0.0)).norm() < 1e-12);
        assert!(rel.xi[5].abs() < 1e-15);
    }
}
