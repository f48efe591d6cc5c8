//! Second-order cone program solver:
//!
//! ```text
//! minimize    c^T x
//! subject to  A x = b,  G x + s = h,  s in K
//! ```
//!
//! `K` is a product of a nonnegative orthant and second-order cones
//! `{(u0, u1) : u0 >= |u1|}`, stacked in that order in the rows of `G`.
//! The method is a primal-dual interior point on the homogeneous self-dual
//! embedding with Nesterov-Todd scaling and a Mehrotra predictor-corrector,
//! so infeasibility is detected from certificates rather than by divergence.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cones {
    pub nonneg: usize,
    pub soc: Vec<usize>,
}

impl Cones {
    pub fn dim(&self) -> usize {
        self.nonneg + self.soc.iter().sum::<usize>()
    }

    /// Number of cones counted with their barrier degree.
    fn degree(&self) -> usize {
        self.nonneg + self.soc.len()
    }
}

#[derive(Debug, Clone)]
pub struct SocpProblem {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub cones: Cones,
}

#[derive(Debug, Clone, Copy)]
pub struct SocpSettings {
    pub max_iter: usize,
    pub tol: f64,
    /// Accuracy accepted when the iteration cap or a numerical stall is hit.
    pub reduced_tol: f64,
}

impl Default for SocpSettings {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-8, reduced_tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct SocpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub s: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl SocpSolution {
    /// Largest of the primal, dual and complementarity residuals.
    pub fn kkt_residual(&self, p: &SocpProblem) -> f64 {
        let mut dual = p.c.clone();
        if p.a.nrows() > 0 {
            dual += p.a.transpose() * &self.y;
        }
        dual += p.g.transpose() * &self.z;
        let primal_eq = if p.a.nrows() > 0 { (&p.a * &self.x - &p.b).amax() } else { 0.0 };
        let primal_in = (&p.g * &self.x + &self.s - &p.h).amax();
        dual.amax().max(primal_eq).max(primal_in).max(self.s.dot(&self.z).abs())
    }
}

/// Per-cone Nesterov-Todd scaling data.
enum Block {
    Nonneg { w: f64 },
    Soc { eta: f64, wbar: DVector<f64> },
}

struct Scaling {
    blocks: Vec<(usize, usize, Block)>,
    lambda: DVector<f64>,
}

fn cone_ranges(cones: &Cones) -> Vec<(usize, usize, bool)> {
    let mut out = Vec::with_capacity(cones.nonneg + cones.soc.len());
    for i in 0..cones.nonneg {
        out.push((i, 1, false));
    }
    let mut off = cones.nonneg;
    for &q in &cones.soc {
        out.push((off, q, true));
        off += q;
    }
    out
}

fn soc_det(u: &[f64]) -> f64 {
    let r = u[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    (u[0] - r) * (u[0] + r)
}

fn jordan_product(cones: &Cones, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(u.len());
    for (off, q, soc) in cone_ranges(cones) {
        if !soc {
            out[off] = u[off] * v[off];
            continue;
        }
        let (u, v) = (u.rows(off, q), v.rows(off, q));
        out[off] = u.dot(&v);
        for i in 1..q {
            out[off + i] = u[0] * v[i] + v[0] * u[i];
        }
    }
    out
}

/// Solves `lambda o x = v` for `x`.
fn jordan_divide(cones: &Cones, lambda: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for (off, q, soc) in cone_ranges(cones) {
        if !soc {
            out[off] = v[off] / lambda[off];
            continue;
        }
        let l = lambda.rows(off, q);
        let vv = v.rows(off, q);
        let det = soc_det(l.as_slice());
        let l1v1: f64 = (1..q).map(|i| l[i] * vv[i]).sum();
        let x0 = (l[0] * vv[0] - l1v1) / det;
        out[off] = x0;
        for i in 1..q {
            out[off + i] = (vv[i] - x0 * l[i]) / l[0];
        }
    }
    out
}

fn identity_element(cones: &Cones) -> DVector<f64> {
    let mut e = DVector::zeros(cones.dim());
    for (off, _, _) in cone_ranges(cones) {
        e[off] = 1.0;
    }
    e
}

impl Scaling {
    fn new(cones: &Cones, s: &DVector<f64>, z: &DVector<f64>) -> Self {
        let mut blocks = Vec::new();
        for (off, q, soc) in cone_ranges(cones) {
            if !soc {
                blocks.push((off, 1, Block::Nonneg { w: (s[off] / z[off]).sqrt() }));
                continue;
            }
            let ss = s.rows(off, q);
            let zz = z.rows(off, q);
            let sn = soc_det(ss.as_slice()).sqrt();
            let zn = soc_det(zz.as_slice()).sqrt();
            let sb = ss / sn;
            let zb = zz / zn;
            let gamma = ((1.0 + sb.dot(&zb)) / 2.0).sqrt();
            let mut wbar = DVector::zeros(q);
            wbar[0] = (sb[0] + zb[0]) / (2.0 * gamma);
            for i in 1..q {
                wbar[i] = (sb[i] - zb[i]) / (2.0 * gamma);
            }
            let eta = (sn / zn).sqrt();
            blocks.push((off, q, Block::Soc { eta, wbar }));
        }
        let mut sc = Scaling { blocks, lambda: DVector::zeros(z.len()) };
        sc.lambda = sc.apply(z, false);
        sc
    }

    /// `W v` or, with `inverse`, `W^{-1} v`.
    fn apply(&self, v: &DVector<f64>, inverse: bool) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (off, q, blk) in &self.blocks {
            match blk {
                Block::Nonneg { w } => out[*off] = if inverse { v[*off] / w } else { v[*off] * w },
                Block::Soc { eta, wbar } => {
                    let vv = v.rows(*off, *q);
                    let sign = if inverse { -1.0 } else { 1.0 };
                    let scale = if inverse { 1.0 / eta } else { *eta };
                    let w1v1: f64 = (1..*q).map(|i| wbar[i] * vv[i]).sum();
                    out[*off] = scale * (wbar[0] * vv[0] + sign * w1v1);
                    let coef = sign * vv[0] + w1v1 / (1.0 + wbar[0]);
                    for i in 1..*q {
                        out[off + i] = scale * (vv[i] + coef * wbar[i]);
                    }
                }
            }
        }
        out
    }

    /// Dense `W^{-2}` block for one cone.
    fn inv_sq_block(&self, k: usize) -> DMatrix<f64> {
        let (_, q, blk) = &self.blocks[k];
        match blk {
            Block::Nonneg { w } => DMatrix::from_element(1, 1, 1.0 / (w * w)),
            Block::Soc { eta, wbar } => {
                let mut winv = DMatrix::zeros(*q, *q);
                winv[(0, 0)] = wbar[0];
                for i in 1..*q {
                    winv[(0, i)] = -wbar[i];
                    winv[(i, 0)] = -wbar[i];
                    for j in 1..*q {
                        winv[(i, j)] = wbar[i] * wbar[j] / (1.0 + wbar[0]);
                    }
                    winv[(i, i)] += 1.0;
                }
                winv /= *eta;
                &winv * &winv
            }
        }
    }
}

/// Largest step in `[0, 1/0.99]`-ish keeping `u + a du` in the cone.
fn max_step(cones: &Cones, u: &DVector<f64>, du: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for (off, q, soc) in cone_ranges(cones) {
        if !soc {
            if du[off] < 0.0 {
                alpha = alpha.min(-u[off] / du[off]);
            }
            continue;
        }
        let uu = u.rows(off, q);
        let dd = du.rows(off, q);
        if dd[0] < 0.0 {
            alpha = alpha.min(-uu[0] / dd[0]);
        }
        let a = soc_det(dd.as_slice());
        let b = 2.0 * (uu[0] * dd[0] - (1..q).map(|i| uu[i] * dd[i]).sum::<f64>());
        let c = soc_det(uu.as_slice()).max(0.0);
        // Smallest positive root of a t^2 + b t + c.
        let root = if a.abs() < 1e-14 * (b.abs() + c.abs()).max(1e-300) {
            if b < 0.0 {
                -c / b
            } else {
                f64::INFINITY
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                f64::INFINITY
            } else {
                let sq = disc.sqrt();
                // Numerically stable pair of roots.
                let qv = -0.5 * (b + b.signum() * sq);
                let r1 = if qv != 0.0 { c / qv } else { f64::INFINITY };
                let r2 = qv / a;
                [r1, r2].into_iter().filter(|r| *r > 0.0).fold(f64::INFINITY, f64::min)
            }
        };
        alpha = alpha.min(root);
    }
    alpha
}

struct Reduced {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    exact: DMatrix<f64>,
    n: usize,
}

const STATIC_REG: f64 = 1e-11;

impl Reduced {
    fn new(p: &SocpProblem, sc: &Scaling) -> Self {
        let n = p.c.len();
        let me = p.a.nrows();
        let mut k = DMatrix::zeros(n + me, n + me);
        for (idx, (off, q, _)) in sc.blocks.iter().enumerate() {
            let gb = p.g.rows(*off, *q);
            let w2 = sc.inv_sq_block(idx);
            let prod = gb.transpose() * w2 * gb;
            let mut tl = k.view_mut((0, 0), (n, n));
            tl += prod;
        }
        if me > 0 {
            k.view_mut((n, 0), (me, n)).copy_from(&p.a);
            k.view_mut((0, n), (n, me)).copy_from(&p.a.transpose());
        }
        let exact = k.clone();
        for i in 0..n {
            k[(i, i)] += STATIC_REG;
        }
        for i in n..n + me {
            k[(i, i)] -= STATIC_REG;
        }
        Reduced { lu: k.lu(), exact, n }
    }

    fn reduced_solve(
        &self,
        p: &SocpProblem,
        sc: &Scaling,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
        r3: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let n = self.n;
        let me = p.a.nrows();
        // z = W^{-2} (G x - r3); reduced rhs is [r1 + G^T W^{-2} r3; r2].
        let w2r3 = sc.apply(&sc.apply(r3, true), true);
        let mut rhs = DVector::zeros(n + me);
        rhs.rows_mut(0, n).copy_from(&(r1 + p.g.transpose() * &w2r3));
        rhs.rows_mut(n, me).copy_from(r2);
        let mut sol = self.lu.solve(&rhs).ok_or(Error::NumericalBlowup)?;
        for _ in 0..2 {
            let res = &rhs - &self.exact * &sol;
            sol += self.lu.solve(&res).ok_or(Error::NumericalBlowup)?;
        }
        let x = sol.rows(0, n).into_owned();
        let y = sol.rows(n, me).into_owned();
        let gx = &p.g * &x - r3;
        let z = sc.apply(&sc.apply(&gx, true), true);
        Ok((x, y, z))
    }

    /// Solves the full KKT system
    /// `[0 A^T G^T; A 0 0; G 0 -W^2] [x; y; z] = [r1; r2; r3]`,
    /// refining against its unreduced residual.
    fn solve(
        &self,
        p: &SocpProblem,
        sc: &Scaling,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
        r3: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let (mut x, mut y, mut z) = self.reduced_solve(p, sc, r1, r2, r3)?;
        let scale = r1.amax().max(r2.amax()).max(r3.amax()).max(1e-300);
        for _ in 0..6 {
            let e1 = r1 - p.a.transpose() * &y - p.g.transpose() * &z;
            let e2 = r2 - &p.a * &x;
            let e3 = r3 - &p.g * &x + sc.apply(&sc.apply(&z, false), false);
            let err = e1.amax().max(e2.amax()).max(e3.amax());
            if err <= 1e-13 * scale {
                break;
            }
            let (dx, dy, dz) = self.reduced_solve(p, sc, &e1, &e2, &e3)?;
            x += dx;
            y += dy;
            z += dz;
        }
        if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup);
        }
        Ok((x, y, z))
    }
}

/// Scales rows of `A` and cone blocks of `G` to unit size; returns the
/// scaled problem plus the factors needed to map multipliers back.
fn equilibrate(p: &SocpProblem) -> (SocpProblem, DVector<f64>, DVector<f64>) {
    let mut q = p.clone();
    let mut da = DVector::from_element(p.a.nrows(), 1.0);
    for i in 0..p.a.nrows() {
        let nrm = p.a.row(i).norm();
        if nrm > 0.0 {
            da[i] = 1.0 / nrm;
        }
    }
    let mut dg = DVector::from_element(p.g.nrows(), 1.0);
    for (off, len, _) in cone_ranges(&p.cones) {
        let nrm = (off..off + len).map(|i| p.g.row(i).norm()).fold(0.0, f64::max);
        if nrm > 0.0 {
            for i in off..off + len {
                dg[i] = 1.0 / nrm;
            }
        }
    }
    for i in 0..p.a.nrows() {
        q.a.row_mut(i).scale_mut(da[i]);
        q.b[i] *= da[i];
    }
    for i in 0..p.g.nrows() {
        q.g.row_mut(i).scale_mut(dg[i]);
        q.h[i] *= dg[i];
    }
    (q, da, dg)
}

pub fn solve_socp(problem: &SocpProblem, settings: &SocpSettings) -> Result<SocpSolution> {
    let n = problem.c.len();
    let me = problem.a.nrows();
    let m = problem.cones.dim();
    if problem.a.ncols() != n
        || problem.g.ncols() != n
        || problem.g.nrows() != m
        || problem.h.len() != m
        || problem.b.len() != me
    {
        return Err(Error::invalid("SOCP dimension mismatch"));
    }
    let (p, da, dg) = equilibrate(problem);
    let cones = &p.cones;
    let e = identity_element(cones);
    let deg = cones.degree() as f64;

    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(me);
    let mut s = e.clone();
    let mut z = e.clone();
    let mut tau = 1.0;
    let mut kappa = 1.0;

    let bn = p.b.norm().max(1.0);
    let hn = p.h.norm().max(1.0);
    let cn = p.c.norm().max(1.0);

    let mut best: Option<(f64, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, f64)> = None;
    let mut iterations = 0;
    loop {
        // Residuals of the embedding.
        let rx = p.a.transpose() * &y + p.g.transpose() * &z + &p.c * tau;
        let ry = &p.a * &x - &p.b * tau;
        let rz = &p.g * &x + &s - &p.h * tau;
        let cx = p.c.dot(&x);
        let byhz = p.b.dot(&y) + p.h.dot(&z);
        let rtau = kappa + cx + byhz;

        let pres = (ry.norm() / bn).max(rz.norm() / hn) / tau;
        let dres = rx.norm() / cn / tau;
        let gap = s.dot(&z) / (tau * tau);
        let pcost = cx / tau;
        let dcost = -byhz / tau;
        let relgap = if pcost < 0.0 {
            gap / -pcost
        } else if dcost > 0.0 {
            gap / dcost
        } else {
            f64::INFINITY
        };
        let merit = pres.max(dres).max(gap.min(relgap));
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, x.clone() / tau, y.clone() / tau, z.clone() / tau, s.clone() / tau, iterations as f64));
        } else if best.as_ref().is_some_and(|b| b.0 <= settings.reduced_tol && iterations as f64 - b.5 >= 4.0) {
            // Close to optimal and no longer improving: numerical floor reached.
            break;
        }
        if pres < settings.tol && dres < settings.tol && (gap < settings.tol || relgap < settings.tol) {
            break;
        }
        // Infeasibility certificates.
        if byhz < 0.0 {
            let dual_ray = (p.a.transpose() * &y + p.g.transpose() * &z).norm();
            if dual_ray / -byhz < settings.tol {
                return Err(Error::Infeasible { segment: 0, reason: "primal infeasibility certificate".into() });
            }
        }
        if cx < 0.0 {
            let prim_ray = (&p.a * &x).norm().max((&p.g * &x + &s).norm());
            if prim_ray / -cx < settings.tol {
                return Err(Error::Infeasible { segment: 0, reason: "problem is unbounded".into() });
            }
        }
        if iterations >= settings.max_iter {
            break;
        }
        iterations += 1;

        let sc = Scaling::new(cones, &s, &z);
        let lambda = sc.lambda.clone();
        let mu = (s.dot(&z) + tau * kappa) / (deg + 1.0);
        let kkt = Reduced::new(&p, &sc);
        // A failed solve this deep into the iteration means the scaling has
        // become too ill-conditioned; fall back to the best iterate so far.
        let Ok((x1, y1, z1)) = kkt.solve(&p, &sc, &-&p.c, &p.b, &p.h) else { break };
        let denom_base = p.c.dot(&x1) + p.b.dot(&y1) + p.h.dot(&z1);

        let direction = |sigma: f64,
                         ds_target: &DVector<f64>,
                         dk_target: f64|
         -> Result<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, f64, f64)> {
            let f = 1.0 - sigma;
            let corr = sc.apply(&jordan_divide(cones, &lambda, ds_target), false);
            let (x2, y2, z2) = kkt.solve(&p, &sc, &(-f * &rx), &(-f * &ry), &(-f * &rz + &corr))?;
            let num = -f * rtau + dk_target / tau - (p.c.dot(&x2) + p.b.dot(&y2) + p.h.dot(&z2));
            let dtau = num / (denom_base - kappa / tau);
            let dx = x2 + dtau * &x1;
            let dy = y2 + dtau * &y1;
            let dz = z2 + dtau * &z1;
            // ds = -W (lambda \ ds_target) - W^2 dz
            let ds = -&corr - sc.apply(&sc.apply(&dz, false), false);
            let dkappa = -(dk_target + kappa * dtau) / tau;
            Ok((dx, dy, dz, ds, dtau, dkappa))
        };
        let step = |ds: &DVector<f64>, dz: &DVector<f64>, dtau: f64, dkappa: f64| {
            let mut a = max_step(cones, &s, ds).min(max_step(cones, &z, dz));
            if dtau < 0.0 {
                a = a.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-kappa / dkappa);
            }
            a
        };

        // Predictor.
        let ll = jordan_product(cones, &lambda, &lambda);
        let Ok((_, _, dz_a, ds_a, dtau_a, dkappa_a)) = direction(0.0, &ll, tau * kappa) else { break };
        let alpha_aff = step(&ds_a, &dz_a, dtau_a, dkappa_a).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        // Corrector.
        let ws = sc.apply(&ds_a, true);
        let wz = sc.apply(&dz_a, false);
        let target = &ll + jordan_product(cones, &ws, &wz) - sigma * mu * &e;
        let dk = tau * kappa + dtau_a * dkappa_a - sigma * mu;
        let Ok((dx, dy, dz, ds, dtau, dkappa)) = direction(sigma, &target, dk) else { break };
        let alpha = (0.99 * step(&ds, &dz, dtau, dkappa)).min(1.0);

        x += alpha * &dx;
        y += alpha * &dy;
        z += alpha * &dz;
        s += alpha * &ds;
        tau += alpha * dtau;
        kappa += alpha * dkappa;

        if !(tau.is_finite() && x.iter().all(|v| v.is_finite())) || alpha < 1e-10 {
            break;
        }
    }

    let (merit, xs, ys, zs, ss, _) = best.expect("at least one residual evaluation");
    let accepted =
        if iterations >= settings.max_iter || merit > settings.tol { merit <= settings.reduced_tol } else { true };
    if !accepted {
        return Err(Error::SolverStalled { iterations });
    }
    // Undo equilibration: original multipliers are the scaled ones times the row factors.
    let y = ys.component_mul(&da);
    let z = zs.component_mul(&dg);
    let s = ss.component_div(&dg);
    let objective = problem.c.dot(&xs);
    Ok(SocpSolution { x: xs, y, z, s, objective, iterations })
}
