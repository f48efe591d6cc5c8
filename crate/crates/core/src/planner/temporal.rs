//! Time allocation along a fixed path.
//!
//! With `b = sdot^2` and `a = sddot` piecewise constant on a uniform grid of
//! `s`, `b` is linear in `s` inside each interval, so velocity and
//! acceleration bounds are linear in `b` and the travel time becomes a sum of
//! `2 ds / (sqrt(b_k) + sqrt(b_{k+1}))` terms that admit a second-order cone
//! lift.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::socp::{solve_socp, Cones, SocpProblem, SocpSettings};
use crate::bspline::SplinePath;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalSettings {
    /// Per-axis velocity bound [m/s].
    pub v_max: f64,
    /// Per-axis acceleration bound [m/s^2].
    pub a_max: f64,
    /// Per-axis bound on `d(r_ddot)/ds`.
    pub lambda_max: f64,
    /// Weight of the squared path acceleration against the travel time.
    pub rho: f64,
    /// Number of grid intervals.
    pub k: usize,
    /// Extra points per interval at which velocity and acceleration bounds are enforced.
    pub subsamples: usize,
    /// Fraction of `v_max` and `a_max` used by the transcription, leaving room
    /// for the curve between enforcement points.
    pub margin: f64,
}

impl Default for TemporalSettings {
    fn default() -> Self {
        Self { v_max: 1.46, a_max: 0.2, lambda_max: 0.1, rho: 0.1, k: 15, subsamples: 4, margin: 0.995 }
    }
}

impl TemporalSettings {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("v_max", self.v_max), ("a_max", self.a_max), ("lambda_max", self.lambda_max)] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if self.k < 2 {
            return Err(Error::invalid("temporal grid needs at least 2 intervals"));
        }
        if !(self.margin > 0.0 && self.margin <= 1.0) {
            return Err(Error::invalid("margin must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Speed condition at one end of the path, in terms of `b = sdot^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndSpeed {
    Fixed(f64),
    AtMost(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeProfile {
    pub grid: Vec<f64>,
    /// `sdot^2` at the grid points.
    pub b: Vec<f64>,
    /// Constant `sddot` on each interval.
    pub a: Vec<f64>,
    pub duration: f64,
    /// Start time of each grid point (`times[K] = duration`).
    pub times: Vec<f64>,
}

impl TimeProfile {
    /// Builds a profile from grid values of `b`, deriving `a`, the knot times and the duration.
    pub fn from_b(b: Vec<f64>) -> Result<Self> {
        let k = b.len() - 1;
        let ds = 1.0 / k as f64;
        let grid = (0..=k).map(|i| i as f64 * ds).collect();
        let a = (0..k).map(|i| (b[i + 1] - b[i]) / (2.0 * ds)).collect();
        let mut times = vec![0.0; k + 1];
        for i in 0..k {
            let denom = b[i].sqrt() + b[i + 1].sqrt();
            if denom <= 0.0 {
                return Err(Error::Infeasible { segment: 0, reason: "path speed vanishes on a whole interval".into() });
            }
            times[i + 1] = times[i] + 2.0 * ds / denom;
        }
        let duration = times[k];
        Ok(Self { grid, b, a, duration, times })
    }

    pub fn k(&self) -> usize {
        self.a.len()
    }

    /// `(s, sdot, sddot)` at time `t`, by inverting the constant-acceleration
    /// motion of the interval containing `t`.
    pub fn time_map(&self, t: f64) -> Result<(f64, f64, f64)> {
        let tol = 1e-9 * self.duration.max(1.0);
        if !(t >= -tol && t <= self.duration + tol) {
            return Err(Error::OutOfDomain { t, duration: self.duration });
        }
        let t = t.clamp(0.0, self.duration);
        let k = self.k();
        let i = match self.times.partition_point(|&tk| tk <= t) {
            0 => 0,
            n => (n - 1).min(k - 1),
        };
        let tau = t - self.times[i];
        let v0 = self.b[i].sqrt();
        let a = self.a[i];
        let s = (self.grid[i] + v0 * tau + 0.5 * a * tau * tau).clamp(self.grid[i], self.grid[i + 1]);
        let sdot = (v0 + a * tau).max(0.0);
        Ok((s, sdot, a))
    }
}

struct Rows {
    n: usize,
    rows: Vec<(Vec<(usize, f64)>, f64)>,
}

impl Rows {
    fn new(n: usize) -> Self {
        Self { n, rows: Vec::new() }
    }

    fn push(&mut self, entries: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push((entries, rhs));
    }

    fn dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut m = DMatrix::zeros(self.rows.len(), self.n);
        let mut v = DVector::zeros(self.rows.len());
        for (i, (entries, rhs)) in self.rows.iter().enumerate() {
            for &(j, val) in entries {
                m[(i, j)] += val;
            }
            v[i] = *rhs;
        }
        (m, v)
    }
}

/// Upper bound on `b` keeping the problem bounded where the path is stationary.
const B_CEILING: f64 = 1e4;

#[derive(Clone, Copy)]
enum Objective {
    Time,
    MaxStartSpeed,
}

/// Path derivatives needed by the transcription, sampled once.
struct PathSamples {
    /// Per interval: `(sigma, r'(s), r''(s))` with `sigma` the offset from the left grid point.
    interval: Vec<Vec<(f64, Vector3<f64>, Vector3<f64>)>>,
    grid: Vec<(Vector3<f64>, Vector3<f64>)>,
}

fn sample_path(path: &SplinePath, k: usize, sub: usize) -> Result<PathSamples> {
    let ds = 1.0 / k as f64;
    let mut interval = Vec::with_capacity(k);
    for i in 0..k {
        let mut pts = Vec::with_capacity(sub + 2);
        for j in 0..=sub + 1 {
            let sigma = ds * j as f64 / (sub + 1) as f64;
            let s = (i as f64 * ds + sigma).min(1.0);
            pts.push((sigma, path.eval(s, 1)?, path.eval(s, 2)?));
        }
        interval.push(pts);
    }
    let grid = (0..=k)
        .map(|i| {
            let s = (i as f64 * ds).min(1.0);
            Ok((path.eval(s, 1)?, path.eval(s, 2)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathSamples { interval, grid })
}

fn build(
    samples: &PathSamples,
    start: EndSpeed,
    end: EndSpeed,
    st: &TemporalSettings,
    objective: Objective,
) -> (SocpProblem, usize) {
    let k = st.k;
    let ds = 1.0 / k as f64;
    let nb = k + 1;
    let timed = matches!(objective, Objective::Time);
    let with_t = timed && st.rho > 0.0;
    // Layout: b (K+1), then d (K+1), e (K), t (1) for the time objective.
    let d0 = nb;
    let e0 = 2 * nb;
    let t_idx = e0 + k;
    let n = if timed { t_idx + usize::from(with_t) } else { nb };

    let mut c = DVector::zeros(n);
    match objective {
        Objective::Time => {
            for i in 0..k {
                c[e0 + i] = (1.0 - st.rho) * 2.0 * ds;
            }
            if with_t {
                c[t_idx] = st.rho;
            }
        }
        Objective::MaxStartSpeed => c[0] = -1.0,
    }

    let mut eq = Rows::new(n);
    let fixed = [(0, start), (k, end)];
    for &(i, cond) in &fixed {
        if let EndSpeed::Fixed(v) = cond {
            eq.push(vec![(i, 1.0)], v);
            if timed {
                eq.push(vec![(d0 + i, 1.0)], v.max(0.0).sqrt());
            }
        }
    }

    let mut lin = Rows::new(n);
    for &(i, cond) in &fixed {
        if let EndSpeed::AtMost(cap) = cond {
            lin.push(vec![(i, 1.0)], cap);
        }
    }
    for i in 0..nb {
        lin.push(vec![(i, 1.0)], B_CEILING);
        lin.push(vec![(i, -1.0)], 0.0);
    }
    // Coefficients below this are rounding noise of an axis the path does not use.
    let tiny = 1e-9 * samples.interval.iter().flatten().map(|(_, d1, d2)| d1.amax().max(d2.amax())).fold(0.0, f64::max);
    let v2 = (st.margin * st.v_max).powi(2);
    let amax = st.margin * st.a_max;
    // b(s_i + sigma) = (1 - sigma/ds) b_i + (sigma/ds) b_{i+1};  a_i = (b_{i+1} - b_i) / (2 ds).
    for (i, pts) in samples.interval.iter().enumerate() {
        for &(sigma, d1, d2) in pts {
            let wl = 1.0 - sigma / ds;
            let wr = sigma / ds;
            for ax in 0..3 {
                let r1 = if d1[ax].abs() > tiny { d1[ax] } else { 0.0 };
                let r2 = if d2[ax].abs() > tiny { d2[ax] } else { 0.0 };
                // Rows that cannot bind for b in [0, B_CEILING] only hurt conditioning.
                if r1 * r1 * B_CEILING > v2 {
                    lin.push(vec![(i, r1 * r1 * wl), (i + 1, r1 * r1 * wr)], v2);
                }
                // r_ddot = r'' b(s) + r' a_i
                let cl = r2 * wl - r1 / (2.0 * ds);
                let cr = r2 * wr + r1 / (2.0 * ds);
                if (cl.abs() + cr.abs()) * B_CEILING > amax {
                    lin.push(vec![(i, cl), (i + 1, cr)], amax);
                    lin.push(vec![(i, -cl), (i + 1, -cr)], amax);
                }
            }
        }
    }
    // Acceleration at grid point j using the interval to its right (the last
    // point uses the final interval); lambda bounds the difference quotient.
    let grid_accel = |j: usize, ax: usize| -> Vec<(usize, f64)> {
        let (d1, d2) = samples.grid[j];
        let d1 = d1.map(|v| if v.abs() > tiny { v } else { 0.0 });
        let d2 = d2.map(|v| if v.abs() > tiny { v } else { 0.0 });
        let iv = j.min(k - 1);
        vec![(j, d2[ax]), (iv, -d1[ax] / (2.0 * ds)), (iv + 1, d1[ax] / (2.0 * ds))]
    };
    for j in 0..k {
        for ax in 0..3 {
            let mut merged = [0.0; 3];
            for (i, v) in grid_accel(j + 1, ax) {
                merged[i - j] += v / ds;
            }
            for (i, v) in grid_accel(j, ax) {
                merged[i - j] -= v / ds;
            }
            // Cancellation leaves rounding noise on rows that carry no constraint.
            let reference = (samples.grid[j].0[ax].abs() / (2.0 * ds) + samples.grid[j].1[ax].abs()) / ds;
            if merged.iter().all(|v| v.abs() <= 1e-9 * reference.max(tiny))
                || merged.iter().map(|v| v.abs()).sum::<f64>() * B_CEILING <= st.lambda_max
            {
                continue;
            }
            let row: Vec<(usize, f64)> =
                merged.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(o, &v)| (j + o, v)).collect();
            let neg: Vec<(usize, f64)> = row.iter().map(|&(i, v)| (i, -v)).collect();
            lin.push(row, st.lambda_max);
            lin.push(neg, st.lambda_max);
        }
    }

    let mut soc = Rows::new(n);
    let mut sizes = Vec::new();
    if timed {
        for i in 0..nb {
            if matches!(fixed.iter().find(|f| f.0 == i), Some((_, EndSpeed::Fixed(_)))) {
                continue;
            }
            // d_i^2 <= b_i:  (b_i + 1, b_i - 1, 2 d_i) in Q^3
            soc.push(vec![(i, -1.0)], 1.0);
            soc.push(vec![(i, -1.0)], -1.0);
            soc.push(vec![(d0 + i, -2.0)], 0.0);
            sizes.push(3);
        }
        for i in 0..k {
            // e_i (d_i + d_{i+1}) >= 1
            soc.push(vec![(e0 + i, -1.0), (d0 + i, -1.0), (d0 + i + 1, -1.0)], 0.0);
            soc.push(vec![(e0 + i, -1.0), (d0 + i, 1.0), (d0 + i + 1, 1.0)], 0.0);
            soc.push(vec![], 2.0);
            sizes.push(3);
        }
        if with_t {
            // t >= sum a_i^2 ds:  (t + 1, t - 1, 2 sqrt(ds) a_i ...) in Q^{K+2}
            soc.push(vec![(t_idx, -1.0)], 1.0);
            soc.push(vec![(t_idx, -1.0)], -1.0);
            let f = 1.0 / ds.sqrt();
            for i in 0..k {
                soc.push(vec![(i + 1, -f), (i, f)], 0.0);
            }
            sizes.push(k + 2);
        }
    }

    let (a, b) = eq.dense();
    let (gl, hl) = lin.dense();
    let (gs, hs) = soc.dense();
    let mut g = DMatrix::zeros(gl.nrows() + gs.nrows(), n);
    g.view_mut((0, 0), (gl.nrows(), n)).copy_from(&gl);
    g.view_mut((gl.nrows(), 0), (gs.nrows(), n)).copy_from(&gs);
    let mut h = DVector::zeros(hl.len() + hs.len());
    h.rows_mut(0, hl.len()).copy_from(&hl);
    h.rows_mut(hl.len(), hs.len()).copy_from(&hs);
    let cones = Cones { nonneg: gl.nrows(), soc: sizes };
    (SocpProblem { c, a, b, g, h, cones }, nb)
}

/// Converts an end velocity into `b = sdot^2`, checking that it points along the path.
pub fn boundary_speed(tangent: &Vector3<f64>, v: &Vector3<f64>) -> Result<f64> {
    let vn = v.norm();
    if vn < 1e-12 {
        return Ok(0.0);
    }
    let tn = tangent.norm();
    if tn < 1e-12 {
        return Err(Error::Infeasible {
            segment: 0,
            reason: "nonzero boundary velocity on a stationary path end".into(),
        });
    }
    let sdot = vn / tn;
    if (v - tangent * sdot).norm() > 1e-3 * vn.max(1.0) {
        return Err(Error::Infeasible { segment: 0, reason: "boundary velocity is not tangent to the path".into() });
    }
    Ok(sdot * sdot)
}

fn check_path(path: &SplinePath) -> Result<()> {
    let moving = (0..=20).any(|i| path.eval(i as f64 / 20.0, 1).map(|d| d.norm() > 1e-9).unwrap_or(false));
    if !moving {
        return Err(Error::Infeasible { segment: 0, reason: "path has zero length".into() });
    }
    Ok(())
}

/// Optimal profile between the given end speeds.
pub fn solve_temporal_with(
    path: &SplinePath,
    start: EndSpeed,
    end: EndSpeed,
    st: &TemporalSettings,
) -> Result<TimeProfile> {
    st.validate()?;
    check_path(path)?;
    let samples = sample_path(path, st.k, st.subsamples)?;
    let (problem, nb) = build(&samples, start, end, st, Objective::Time);
    let sol = solve_socp(&problem, &SocpSettings::default())?;
    let mut b: Vec<f64> = sol.x.rows(0, nb).iter().map(|v| v.max(0.0)).collect();
    for (i, cond) in [(0, start), (nb - 1, end)] {
        if let EndSpeed::Fixed(v) = cond {
            b[i] = v;
        }
    }
    TimeProfile::from_b(b)
}

/// Optimal profile for boundary velocities `v0` and `vf`.
pub fn solve_temporal(
    path: &SplinePath,
    v0: &Vector3<f64>,
    vf: &Vector3<f64>,
    st: &TemporalSettings,
) -> Result<TimeProfile> {
    let b0 = boundary_speed(&path.eval(0.0, 1)?, v0)?;
    let bf = boundary_speed(&path.eval(1.0, 1)?, vf)?;
    solve_temporal_with(path, EndSpeed::Fixed(b0), EndSpeed::Fixed(bf), st)
}

/// Largest feasible `b(0)` given the condition at the far end.
pub fn max_start_speed(path: &SplinePath, end: EndSpeed, st: &TemporalSettings) -> Result<f64> {
    st.validate()?;
    check_path(path)?;
    let samples = sample_path(path, st.k, st.subsamples)?;
    let (problem, _) = build(&samples, EndSpeed::AtMost(B_CEILING), end, st, Objective::MaxStartSpeed);
    let sol = solve_socp(&problem, &SocpSettings::default())?;
    Ok(sol.x[0].max(0.0))
}

/// `(s, sdot, sddot)` at time `t`; see [`TimeProfile::time_map`].
pub fn time_map(profile: &TimeProfile, t: f64) -> Result<(f64, f64, f64)> {
    profile.time_map(t)
}

/// Position, velocity and acceleration of `path` traversed with `profile` at time `t`.
pub fn sample(path: &SplinePath, profile: &TimeProfile, t: f64) -> Result<[Vector3<f64>; 3]> {
    let (s, sdot, sddot) = profile.time_map(t)?;
    let [r, d1, d2] = path.eval_upto2(s)?;
    Ok([r, d1 * sdot, d2 * sdot * sdot + d1 * sddot])
}
