//! Model-mismatch disturbance bounds for the robust controller and
//! scenario-approach certification of the regulator's region of attraction.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{feedforward_thrust, lqr_control, LqrGain};
use crate::error::{Error, Result};
use crate::model::{full_dynamics, quad_dynamics, ControlInput, FullState, SystemParams, Vector14};
use crate::sim::step;
use crate::so3;

/// Box `|x_i - x0_i| <= a_i` around hover plus an input box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingRegion {
    pub a: [f64; 14],
    /// Lower bounds of `(F, tau_x, tau_y, tau_z)`.
    pub u_min: [f64; 4],
    pub u_max: [f64; 4],
}

impl OperatingRegion {
    /// 0.2 on the swing angle and its rate, 0.1 on every other coordinate;
    /// thrust in `[0, 4 (m + m_L) g]`, torques within 0.05 N m.
    pub fn standard(p: &SystemParams) -> Self {
        let mut a = [0.1; 14];
        a[6] = 0.2;
        a[13] = 0.2;
        Self {
            a,
            u_min: [0.0, -0.05, -0.05, -0.05],
            u_max: [4.0 * (p.mass + p.payload_mass) * p.gravity, 0.05, 0.05, 0.05],
        }
    }

    /// Same state box, thrust within `frac` of hover and torques within `tau`.
    pub fn near_hover(p: &SystemParams, frac: f64, tau: f64) -> Self {
        let mut r = Self::standard(p);
        let f = p.hover_thrust();
        r.u_min = [f * (1.0 - frac), -tau, -tau, -tau];
        r.u_max = [f * (1.0 + frac), tau, tau, tau];
        r
    }

    /// Same state box with thrust within 10 % of hover and torques within
    /// 0.01 N m: the inputs the controllers command around the hover point.
    pub fn hover_inputs(p: &SystemParams) -> Self {
        Self::near_hover(p, 0.1, 0.01)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("region half-widths must be positive"));
        }
        if self.u_min.iter().zip(&self.u_max).any(|(l, u)| !(l <= u)) {
            return Err(Error::invalid("input box must satisfy min <= max"));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut r = self.clone();
        r.a.iter_mut().for_each(|v| *v *= factor);
        r
    }

    /// Maps a point of the unit cube `[0, 1]^18` into state and input.
    fn decode(&self, z: &[f64; 18]) -> (FullState, ControlInput) {
        let mut x = Vector14::zeros();
        for i in 0..14 {
            x[i] = self.a[i] * (2.0 * z[i] - 1.0);
        }
        let u: [f64; 4] = std::array::from_fn(|j| self.u_min[j] + (self.u_max[j] - self.u_min[j]) * z[14 + j]);
        (FullState::from_vector(&x), ControlInput::new(u[0], Vector3::new(u[1], u[2], u[3])))
    }
}

/// `(|f_full^r - f_quad^r|, |f_full^w - f_quad^w|)`: the force and torque the
/// manipulator exerts on the vehicle beyond the bare quadrotor model. The
/// quadrotor model receives the thrust net of the payload feedforward, which
/// is what the tracking law sees while carrying.
pub fn model_mismatch(state: &FullState, u: &ControlInput, p: &SystemParams) -> Result<(f64, f64)> {
    let acc = full_dynamics(state, u, p)?;
    let quad_state = state.quad_state();
    let quad_input = ControlInput::new(u.thrust - feedforward_thrust(0.0, &quad_state.rot, p), u.torque);
    let quad = quad_dynamics(&quad_state, &quad_input, p);
    let euler = state.euler();
    let rates = state.euler_rates();
    let q = so3::euler_rate_matrix(&euler);
    let dq = so3::euler_rate_matrix_partials(&euler);
    let q_dot = dq[0] * rates.x + dq[1] * rates.y + dq[2] * rates.z;
    let omega_dot = q * acc.fixed_rows::<3>(3) + q_dot * rates;
    let j = p.inertia();
    let dr = p.mass * (acc.fixed_rows::<3>(0) - quad.accel);
    let dw = j * (omega_dot - quad.omega_dot);
    Ok((dr.norm(), dw.norm()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundSettings {
    pub starts: usize,
    pub probes: usize,
    pub ascent_iters: usize,
    /// Factor applied to the largest value found.
    pub inflation: f64,
    pub seed: u64,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self { starts: 64, probes: 10_000, ascent_iters: 60, inflation: 1.1, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceBounds {
    /// Reported bounds (best found times the inflation factor).
    pub delta_r: f64,
    #[serde(rename = "delta_R")]
    pub delta_rot: f64,
    pub max_found_r: f64,
    #[serde(rename = "max_found_R")]
    pub max_found_rot: f64,
    pub inflation: f64,
    pub region: OperatingRegion,
}

/// Latin-hypercube sample of `n` points in `[0, 1]^18`.
fn latin_hypercube(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 18]> {
    let mut pts = vec![[0.0; 18]; n];
    for d in 0..18 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (i, pt) in pts.iter_mut().enumerate() {
            pt[d] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Projected gradient ascent in the unit cube with finite-difference gradients.
fn ascend(f: &dyn Fn(&[f64; 18]) -> f64, start: [f64; 18], iters: usize) -> f64 {
    let h = 1e-6;
    let mut z = start;
    let mut val = f(&z);
    let mut step = 0.1;
    for _ in 0..iters {
        let mut grad = [0.0; 18];
        for d in 0..18 {
            let mut zp = z;
            let mut zm = z;
            zp[d] = (z[d] + h).min(1.0);
            zm[d] = (z[d] - h).max(0.0);
            grad[d] = (f(&zp) - f(&zm)) / (zp[d] - zm[d]);
        }
        let gn = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(gn > 0.0) {
            break;
        }
        let mut improved = false;
        while step > 1e-6 {
            let cand: [f64; 18] = std::array::from_fn(|d| (z[d] + step * grad[d] / gn).clamp(0.0, 1.0));
            let v = f(&cand);
            if v > val {
                z = cand;
                val = v;
                improved = true;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    val
}

/// Largest model mismatch over the region by probing plus multi-start ascent.
/// The result is a lower bound of the true maximum; see `BoundSettings::inflation`.
pub fn disturbance_bounds(region: &OperatingRegion, p: &SystemParams, st: &BoundSettings) -> Result<DisturbanceBounds> {
    region.validate()?;
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(st.seed);
    let probes = latin_hypercube(st.probes.max(st.starts).max(1), &mut rng);
    let eval = |z: &[f64; 18], which: usize| {
        let (x, u) = region.decode(z);
        model_mismatch(&x, &u, p).map(|v| if which == 0 { v.0 } else { v.1 }).unwrap_or(0.0)
    };
    let mut best = [0.0f64; 2];
    for which in 0..2 {
        let mut scored: Vec<(f64, usize)> = probes.par_iter().enumerate().map(|(i, z)| (eval(z, which), i)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let f = |z: &[f64; 18]| eval(z, which);
        let ascended = scored
            .par_iter()
            .take(st.starts)
            .map(|&(_, i)| ascend(&f, probes[i], st.ascent_iters))
            .reduce(|| 0.0, f64::max);
        best[which] = ascended.max(scored.first().map_or(0.0, |s| s.0));
    }
    Ok(DisturbanceBounds {
        delta_r: best[0] * st.inflation,
        delta_rot: best[1] * st.inflation,
        max_found_r: best[0],
        max_found_rot: best[1],
        inflation: st.inflation,
        region: region.clone(),
    })
}

/// `epsilon(1) = 1 - (beta / N^2)^(1 / (N - 1))`: violation-probability bound
/// when all `N` sampled trajectories converge.
pub fn scenario_epsilon(n: usize, beta: f64) -> f64 {
    if n < 2 {
        return 1.0;
    }
    let n = n as f64;
    // Evaluated through logs to stay accurate for large N.
    -((beta.ln() - 2.0 * n.ln()) / (n - 1.0)).exp_m1()
}

/// Smallest `N` with `scenario_epsilon(N, beta) <= epsilon`.
pub fn scenario_sample_count(beta: f64, epsilon: f64) -> Result<usize> {
    if !(beta > 0.0 && beta < 1.0 && epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid("beta and epsilon must lie in (0, 1)"));
    }
    let mut hi = 2usize;
    while scenario_epsilon(hi, beta) > epsilon {
        hi *= 2;
    }
    let mut lo = hi / 2;
    // Invariant: eps(lo) > epsilon >= eps(hi).
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if scenario_epsilon(mid, beta) <= epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoaSettings {
    #[serde(rename = "T_sim")]
    pub t_sim: f64,
    pub r_conv: f64,
    pub dt: f64,
    pub control_dt: f64,
    pub seed: u64,
}

impl Default for RoaSettings {
    fn default() -> Self {
        Self { t_sim: 30.0, r_conv: 1e-3, dt: 2e-3, control_dt: 2e-3, seed: 42 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSample {
    pub index: usize,
    pub x0: Vec<f64>,
    pub final_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    #[serde(rename = "N")]
    pub n: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub decision: Decision,
    pub failed_samples: Vec<FailedSample>,
    pub seed: u64,
    #[serde(rename = "T_sim")]
    pub t_sim: f64,
    pub r_conv: f64,
}

/// Initial state `index` of the certification run: uniform in the region,
/// drawn from its own stream so results do not depend on scheduling.
pub fn roa_sample(region: &OperatingRegion, seed: u64, index: usize) -> Vector14 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut x = Vector14::zeros();
    for i in 0..14 {
        x[i] = rng.random_range(-region.a[i]..=region.a[i]);
    }
    x
}

/// Simulates the regulated full model from `x0`; returns `|x(T) - x_eq|`,
/// or infinity when the trajectory blows up.
pub fn regulated_final_error(x0: &Vector14, gain: &LqrGain, p: &SystemParams, st: &RoaSettings) -> f64 {
    let sub = (st.control_dt / st.dt).round().max(1.0) as usize;
    let ticks = (st.t_sim / st.control_dt).round() as usize;
    let mut s = FullState::from_vector(&(gain.x0 + x0));
    for _ in 0..ticks {
        let u = lqr_control(&s, gain);
        for _ in 0..sub {
            match step(&s, &u, p, st.dt) {
                Ok(next) => s = next,
                Err(_) => return f64::INFINITY,
            }
        }
    }
    (s.to_vector() - gain.x0).norm()
}

pub fn certify_roa(
    region: &OperatingRegion,
    gain: &LqrGain,
    p: &SystemParams,
    n: usize,
    beta: f64,
    st: &RoaSettings,
) -> Result<Certificate> {
    region.validate()?;
    if n < 1 || !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid("need N >= 1 and beta in (0, 1)"));
    }
    let failed_samples: Vec<FailedSample> = (0..n)
        .into_par_iter()
        .filter_map(|i| {
            let x0 = roa_sample(region, st.seed, i);
            let err = regulated_final_error(&x0, gain, p, st);
            (!(err < st.r_conv)).then(|| FailedSample { index: i, x0: x0.iter().copied().collect(), final_norm: err })
        })
        .collect();
    let decision = if failed_samples.is_empty() { Decision::Stable } else { Decision::Unstable };
    Ok(Certificate {
        n,
        beta,
        epsilon: scenario_epsilon(n, beta),
        decision,
        failed_samples,
        seed: st.seed,
        t_sim: st.t_sim,
        r_conv: st.r_conv,
    })
}
