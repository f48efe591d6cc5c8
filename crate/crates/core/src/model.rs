//! Physical parameters and the two dynamics models: the bare quadrotor on
//! SO(3) and the 7-DoF quadrotor-hook manipulator in Euler-Lagrange form
//! `H(xi) xi'' + C(xi, xi') xi' + G(xi) = Xi(xi) u`.
//!
//! The hook and payload are a point mass at the end of a massless pole of
//! length `L` hinged at the vehicle's centre of mass. The pole swings in the
//! body x-z plane; its offset in the body frame is
//! `r_b = (-L sin(alpha), 0, -L cos(alpha))`. The hook mass is always part of
//! the pendulum mass, the payload mass only while attached.
//!
//! `C` is assembled from Christoffel symbols of the first kind,
//! `C_ij = sum_k 1/2 (dH_ij/dxi_k + dH_ik/dxi_j - dH_jk/dxi_i) xi'_k`,
//! which makes `H' - 2C` skew-symmetric.

use nalgebra::{Cholesky, Matrix3, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3;

pub type Vector7 = SVector<f64, 7>;
pub type Vector14 = SVector<f64, 14>;
pub type Matrix7 = SMatrix<f64, 7, 7>;
pub type Matrix7x4 = SMatrix<f64, 7, 4>;
pub type Matrix14 = SMatrix<f64, 14, 14>;
pub type Matrix14x4 = SMatrix<f64, 14, 4>;
pub type Matrix4x14 = SMatrix<f64, 4, 14>;
type Matrix3x7 = SMatrix<f64, 3, 7>;

/// Minimum distance of the pitch angle from `+-pi/2` before the Euler-angle
/// model is rejected.
pub const SINGULARITY_MARGIN: f64 = 0.1;

/// Physical parameters. JSON keys follow the usual symbols
/// (`m, Jx, Jy, Jz, l, L, m_h, d_h, m_L, g`), SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Drone mass [kg].
    #[serde(rename = "m")]
    pub mass: f64,
    #[serde(rename = "Jx")]
    pub jx: f64,
    #[serde(rename = "Jy")]
    pub jy: f64,
    #[serde(rename = "Jz")]
    pub jz: f64,
    /// Rotor distance [m].
    #[serde(rename = "l")]
    pub rotor_arm: f64,
    /// Pole length [m].
    #[serde(rename = "L")]
    pub pole_length: f64,
    #[serde(rename = "m_h")]
    pub hook_mass: f64,
    #[serde(rename = "d_h")]
    pub hook_diameter: f64,
    /// Payload mass [kg]; zero while nothing is attached.
    #[serde(rename = "m_L", default)]
    pub payload_mass: f64,
    #[serde(rename = "g", default = "default_gravity")]
    pub gravity: f64,
}

fn default_gravity() -> f64 {
    9.81
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::hook_platform()
    }
}

impl SystemParams {
    /// The custom quadrotor-hook platform, without payload.
    pub fn hook_platform() -> Self {
        Self {
            mass: 0.605,
            jx: 1.5e-3,
            jy: 1.45e-3,
            jz: 2.66e-3,
            rotor_arm: 0.083,
            pole_length: 0.4,
            hook_mass: 0.01,
            hook_diameter: 0.04,
            payload_mass: 0.0,
            gravity: 9.81,
        }
    }

    pub fn with_payload(mut self, payload_mass: f64) -> Self {
        self.payload_mass = payload_mass;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.mass),
            ("Jx", self.jx),
            ("Jy", self.jy),
            ("Jz", self.jz),
            ("l", self.rotor_arm),
            ("L", self.pole_length),
            ("d_h", self.hook_diameter),
            ("g", self.gravity),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.hook_mass >= 0.0 && self.payload_mass >= 0.0) {
            return Err(Error::invalid("hook and payload masses must be non-negative"));
        }
        if self.hook_diameter >= self.pole_length {
            return Err(Error::invalid("hook diameter must be smaller than the pole length"));
        }
        Ok(())
    }

    pub fn inertia(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(self.jx, self.jy, self.jz))
    }

    pub fn inertia_inv(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(1.0 / self.jx, 1.0 / self.jy, 1.0 / self.jz))
    }

    /// Point mass at the end of the pole: hook plus attached payload.
    pub fn pendulum_mass(&self) -> f64 {
        self.hook_mass + self.payload_mass
    }

    pub fn total_mass(&self) -> f64 {
        self.mass + self.pendulum_mass()
    }

    /// Thrust holding the whole system at rest.
    pub fn hover_thrust(&self) -> f64 {
        self.total_mass() * self.gravity
    }
}

/// Generalized coordinates `xi = (r, phi, theta, psi, alpha)` and their rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FullState {
    pub xi: Vector7,
    pub xi_dot: Vector7,
}

impl FullState {
    pub fn new(xi: Vector7, xi_dot: Vector7) -> Self {
        Self { xi, xi_dot }
    }

    pub fn from_vector(x: &Vector14) -> Self {
        Self { xi: x.fixed_rows::<7>(0).into_owned(), xi_dot: x.fixed_rows::<7>(7).into_owned() }
    }

    pub fn to_vector(&self) -> Vector14 {
        let mut x = Vector14::zeros();
        x.fixed_rows_mut::<7>(0).copy_from(&self.xi);
        x.fixed_rows_mut::<7>(7).copy_from(&self.xi_dot);
        x
    }

    pub fn position(&self) -> Vector3<f64> {
        self.xi.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.xi_dot.fixed_rows::<3>(0).into_owned()
    }

    pub fn euler(&self) -> Vector3<f64> {
        self.xi.fixed_rows::<3>(3).into_owned()
    }

    pub fn euler_rates(&self) -> Vector3<f64> {
        self.xi_dot.fixed_rows::<3>(3).into_owned()
    }

    pub fn alpha(&self) -> f64 {
        self.xi[6]
    }

    pub fn alpha_dot(&self) -> f64 {
        self.xi_dot[6]
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        so3::euler_to_rot(&self.euler())
    }

    /// Quadrotor-only view of the state (body rates via `omega = Q lambda'`).
    pub fn quad_state(&self) -> QuadState {
        let euler = self.euler();
        QuadState {
            r: self.position(),
            v: self.velocity(),
            rot: so3::euler_to_rot(&euler),
            omega: so3::euler_rate_matrix(&euler) * self.euler_rates(),
        }
    }

    /// Pole tip (hook) position `r + R r_b`.
    pub fn hook_position(&self, p: &SystemParams) -> Vector3<f64> {
        self.position() + self.rotation() * pole_offset(self.alpha(), p.pole_length)
    }

    pub fn hook_velocity(&self, p: &SystemParams) -> Vector3<f64> {
        let euler = self.euler();
        let rot = so3::euler_to_rot(&euler);
        let offset = rot * pole_offset(self.alpha(), p.pole_length);
        let omega = so3::euler_rate_matrix(&euler) * self.euler_rates();
        self.velocity()
            + (rot * omega).cross(&offset)
            + rot * pole_offset_d(self.alpha(), p.pole_length) * self.alpha_dot()
    }

    pub fn check_orientation(&self) -> Result<()> {
        let theta = self.xi[4];
        if theta.abs() >= std::f64::consts::FRAC_PI_2 - SINGULARITY_MARGIN || !theta.is_finite() {
            return Err(Error::SingularOrientation { theta });
        }
        Ok(())
    }
}

/// Rigid-body state on SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    /// Body-to-inertial rotation.
    pub rot: Matrix3<f64>,
    /// Body angular velocity.
    pub omega: Vector3<f64>,
}

impl QuadState {
    pub fn hover_at(r: Vector3<f64>) -> Self {
        Self { r, v: Vector3::zeros(), rot: Matrix3::identity(), omega: Vector3::zeros() }
    }
}

/// Collective thrust and body torque.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

impl ControlInput {
    pub fn new(thrust: f64, torque: Vector3<f64>) -> Self {
        Self { thrust, torque }
    }

    pub fn hover(p: &SystemParams) -> Self {
        Self { thrust: p.hover_thrust(), torque: Vector3::zeros() }
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.thrust, self.torque.x, self.torque.y, self.torque.z)
    }

    pub fn from_vector(u: &Vector4<f64>) -> Self {
        Self { thrust: u[0], torque: Vector3::new(u[1], u[2], u[3]) }
    }
}

/// Time derivative of a [`QuadState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadDerivative {
    pub accel: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
    pub rot_dot: Matrix3<f64>,
}

/// Rigid-body quadrotor dynamics without the manipulator.
pub fn quad_dynamics(state: &QuadState, u: &ControlInput, p: &SystemParams) -> QuadDerivative {
    let e3 = Vector3::z();
    let j = p.inertia();
    let accel = (-p.mass * p.gravity * e3 + u.thrust * state.rot * e3) / p.mass;
    let omega_dot = p.inertia_inv() * (u.torque - state.omega.cross(&(j * state.omega)));
    QuadDerivative { accel, omega_dot, rot_dot: state.rot * so3::hat(&state.omega) }
}

pub(crate) fn pole_offset(alpha: f64, len: f64) -> Vector3<f64> {
    let (s, c) = alpha.sin_cos();
    Vector3::new(-len * s, 0.0, -len * c)
}

fn pole_offset_d(alpha: f64, len: f64) -> Vector3<f64> {
    let (s, c) = alpha.sin_cos();
    Vector3::new(-len * c, 0.0, len * s)
}

fn pole_offset_dd(alpha: f64, len: f64) -> Vector3<f64> {
    let (s, c) = alpha.sin_cos();
    Vector3::new(len * s, 0.0, len * c)
}

/// Coefficient matrices of the manipulator equations of motion.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianTerms {
    pub h: Matrix7,
    pub c: Matrix7,
    pub g: Vector7,
    pub xi: Matrix7x4,
}

/// Configuration-dependent pieces shared by `H`, its partials and `G`.
struct Kinematics {
    rot: Matrix3<f64>,
    q: Matrix3<f64>,
    offset: Vector3<f64>,
    /// Payload velocity Jacobian.
    jac_l: Matrix3x7,
    /// Body-rate Jacobian.
    jac_w: Matrix3x7,
    /// Partials of `jac_l`, `jac_w` and the world offset w.r.t. phi, theta, psi, alpha.
    d_jac_l: [Matrix3x7; 4],
    d_jac_w: [Matrix3x7; 4],
    d_offset: [Vector3<f64>; 4],
}

impl Kinematics {
    fn new(xi: &Vector7, p: &SystemParams) -> Self {
        let euler = Vector3::new(xi[3], xi[4], xi[5]);
        let alpha = xi[6];
        let len = p.pole_length;
        let rot = so3::euler_to_rot(&euler);
        let q = so3::euler_rate_matrix(&euler);
        let d_rot = so3::euler_to_rot_partials(&euler);
        let d_q = so3::euler_rate_matrix_partials(&euler);
        let rb = pole_offset(alpha, len);
        let rb_a = pole_offset_d(alpha, len);
        let rb_aa = pole_offset_dd(alpha, len);

        let offset = rot * rb;
        let rq = rot * q;

        let mut jac_l = Matrix3x7::zeros();
        jac_l.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        jac_l.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-so3::hat(&offset) * rq));
        jac_l.fixed_view_mut::<3, 1>(0, 6).copy_from(&(rot * rb_a));

        let mut jac_w = Matrix3x7::zeros();
        jac_w.fixed_view_mut::<3, 3>(0, 3).copy_from(&q);

        let mut d_jac_l = [Matrix3x7::zeros(); 4];
        let mut d_jac_w = [Matrix3x7::zeros(); 4];
        let mut d_offset = [Vector3::zeros(); 4];
        for k in 0..4 {
            let (d_off, d_rq, d_col) = if k < 3 {
                (d_rot[k] * rb, d_rot[k] * q + rot * d_q[k], d_rot[k] * rb_a)
            } else {
                (rot * rb_a, Matrix3::zeros(), rot * rb_aa)
            };
            d_offset[k] = d_off;
            let block = -so3::hat(&d_off) * rq - so3::hat(&offset) * d_rq;
            d_jac_l[k].fixed_view_mut::<3, 3>(0, 3).copy_from(&block);
            d_jac_l[k].fixed_view_mut::<3, 1>(0, 6).copy_from(&d_col);
            if k < 3 {
                d_jac_w[k].fixed_view_mut::<3, 3>(0, 3).copy_from(&d_q[k]);
            }
        }
        Self { rot, q, offset, jac_l, jac_w, d_jac_l, d_jac_w, d_offset }
    }

    fn inertia_matrix(&self, p: &SystemParams) -> Matrix7 {
        let j = p.inertia();
        let mut h = self.jac_w.transpose() * j * self.jac_w + p.pendulum_mass() * self.jac_l.transpose() * self.jac_l;
        for i in 0..3 {
            h[(i, i)] += p.mass;
        }
        h
    }

    /// `dH/dxi_k` for k = 3..=6 (H does not depend on position).
    fn inertia_partials(&self, p: &SystemParams) -> [Matrix7; 4] {
        let j = p.inertia();
        let mp = p.pendulum_mass();
        std::array::from_fn(|k| {
            let a = self.jac_w.transpose() * j * self.d_jac_w[k];
            let b = mp * self.jac_l.transpose() * self.d_jac_l[k];
            a + a.transpose() + b + b.transpose()
        })
    }

    fn gravity_vector(&self, p: &SystemParams) -> Vector7 {
        let mp = p.pendulum_mass();
        let mut g = Vector7::zeros();
        g[2] = (p.mass + mp) * p.gravity;
        for k in 0..4 {
            g[3 + k] = mp * p.gravity * self.d_offset[k].z;
        }
        g
    }

    fn input_matrix(&self) -> Matrix7x4 {
        let mut xi = Matrix7x4::zeros();
        xi.fixed_view_mut::<3, 1>(0, 0).copy_from(&self.rot.column(2));
        xi.fixed_view_mut::<3, 3>(3, 1).copy_from(&self.q.transpose());
        xi
    }
}

/// Full Coriolis matrix from the inertia partials.
fn coriolis_matrix(dh: &[Matrix7; 4], xi_dot: &Vector7) -> Matrix7 {
    // dH/dxi_k vanishes for the position coordinates k = 0..3.
    let d = |k: usize, i: usize, j: usize| if k < 3 { 0.0 } else { dh[k - 3][(i, j)] };
    let mut c = Matrix7::zeros();
    for i in 0..7 {
        for j in 0..7 {
            let mut acc = 0.0;
            for k in 0..7 {
                acc += 0.5 * (d(k, i, j) + d(j, i, k) - d(i, j, k)) * xi_dot[k];
            }
            c[(i, j)] = acc;
        }
    }
    c
}

/// `C(xi, xi') xi'` without forming `C`.
fn coriolis_vector(dh: &[Matrix7; 4], xi_dot: &Vector7) -> Vector7 {
    let mut out = Vector7::zeros();
    for k in 0..4 {
        out += xi_dot[3 + k] * (dh[k] * xi_dot);
    }
    for i in 3..7 {
        out[i] -= 0.5 * xi_dot.dot(&(dh[i - 3] * xi_dot));
    }
    out
}

/// `H`, `C`, `G` and `Xi` at the given state.
pub fn lagrangian_matrices(state: &FullState, p: &SystemParams) -> Result<LagrangianTerms> {
    state.check_orientation()?;
    let kin = Kinematics::new(&state.xi, p);
    let dh = kin.inertia_partials(p);
    Ok(LagrangianTerms {
        h: kin.inertia_matrix(p),
        c: coriolis_matrix(&dh, &state.xi_dot),
        g: kin.gravity_vector(p),
        xi: kin.input_matrix(),
    })
}

/// Kinetic and potential energy of the manipulator system.
pub fn energy(state: &FullState, p: &SystemParams) -> (f64, f64) {
    let kin = Kinematics::new(&state.xi, p);
    let kinetic = 0.5 * state.xi_dot.dot(&(kin.inertia_matrix(p) * state.xi_dot));
    let z = state.xi[2];
    let potential = p.mass * p.gravity * z + p.pendulum_mass() * p.gravity * (z + kin.offset.z);
    (kinetic, potential)
}

/// Generalized accelerations `xi'' = H^-1 (Xi u - C xi' - G)`.
///
/// With a massless pendulum the swing coordinate decouples; its acceleration
/// is reported as zero.
pub fn full_dynamics(state: &FullState, u: &ControlInput, p: &SystemParams) -> Result<Vector7> {
    state.check_orientation()?;
    let kin = Kinematics::new(&state.xi, p);
    let h = kin.inertia_matrix(p);
    let dh = kin.inertia_partials(p);
    let rhs = kin.input_matrix() * u.as_vector() - coriolis_vector(&dh, &state.xi_dot) - kin.gravity_vector(p);

    if p.pendulum_mass() > 0.0 {
        let chol = Cholesky::new(h).ok_or(Error::SingularOrientation { theta: state.xi[4] })?;
        Ok(chol.solve(&rhs))
    } else {
        let h6 = h.fixed_view::<6, 6>(0, 0).into_owned();
        let r6 = rhs.fixed_rows::<6>(0).into_owned();
        let chol = Cholesky::new(h6).ok_or(Error::SingularOrientation { theta: state.xi[4] })?;
        let a6 = chol.solve(&r6);
        let mut out = Vector7::zeros();
        out.fixed_rows_mut::<6>(0).copy_from(&a6);
        Ok(out)
    }
}

/// First-order state-space vector field `[xi'; f_full]`.
pub fn state_derivative(x: &Vector14, u: &ControlInput, p: &SystemParams) -> Result<Vector14> {
    let s = FullState::from_vector(x);
    let acc = full_dynamics(&s, u, p)?;
    let mut dx = Vector14::zeros();
    dx.fixed_rows_mut::<7>(0).copy_from(&s.xi_dot);
    dx.fixed_rows_mut::<7>(7).copy_from(&acc);
    Ok(dx)
}

/// Residual tolerated by [`linearize`] when checking the equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-6;
/// Central-difference step used for Jacobians.
pub const JACOBIAN_STEP: f64 = 1e-6;

/// Central finite-difference Jacobians `(A, B)` of the state-space model at an
/// equilibrium.
pub fn linearize(x0: &FullState, u0: &ControlInput, p: &SystemParams) -> Result<(Matrix14, Matrix14x4)> {
    let xv = x0.to_vector();
    let residual = state_derivative(&xv, u0, p)?.norm();
    if residual > EQUILIBRIUM_TOL {
        return Err(Error::NotEquilibrium { residual });
    }
    let h = JACOBIAN_STEP;
    let mut a = Matrix14::zeros();
    for j in 0..14 {
        let mut xp = xv;
        let mut xm = xv;
        xp[j] += h;
        xm[j] -= h;
        let col = (state_derivative(&xp, u0, p)? - state_derivative(&xm, u0, p)?) / (2.0 * h);
        a.set_column(j, &col);
    }
    let uv = u0.as_vector();
    let mut b = Matrix14x4::zeros();
    for j in 0..4 {
        let mut up = uv;
        let mut um = uv;
        up[j] += h;
        um[j] -= h;
        let col = (state_derivative(&xv, &ControlInput::from_vector(&up), p)?
            - state_derivative(&xv, &ControlInput::from_vector(&um), p)?)
            / (2.0 * h);
        b.set_column(j, &col);
    }
    Ok((a, b))
}

/// Attitude whose third axis points along `thrust` and whose ZYX yaw is `psi`.
pub fn attitude_from_thrust(thrust: &Vector3<f64>, psi: f64) -> Result<Matrix3<f64>> {
    let n = thrust.norm();
    if !(n > 1e-12) {
        return Err(Error::DegenerateThrust);
    }
    let b3 = thrust / n;
    let y_c = Vector3::new(-psi.sin(), psi.cos(), 0.0);
    let b1 = y_c.cross(&b3);
    let b1n = b1.norm();
    if b1n < 1e-9 {
        return Err(Error::DegenerateThrust);
    }
    let b1 = b1 / b1n;
    let b2 = b3.cross(&b1);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// Differential flatness: desired attitude from the desired acceleration and yaw.
pub fn flat_outputs_to_attitude(r_ddot_d: &Vector3<f64>, psi_d: f64, p: &SystemParams) -> Result<Matrix3<f64>> {
    attitude_from_thrust(&(p.mass * (r_ddot_d + p.gravity * Vector3::z())), psi_d)
}
