//! Dense convex QP solver:
//!
//! ```text
//! minimize    1/2 x^T H x + f^T x
//! subject to  A x = b,  G x <= h
//! ```
//!
//! Dual active-set method: start from the equality-constrained minimizer and
//! repeatedly add the most violated inequality, taking partial steps that
//! drop constraints whose multiplier would turn negative. Every step solves
//! the KKT system of the current working set directly. `H` must be positive
//! definite on the null space of the equality constraints.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g_in: DMatrix<f64>,
    pub h_in: DVector<f64>,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of the equality rows kept after redundancy elimination,
    /// expanded back to the original row count (zeros for dropped rows).
    pub eq_multipliers: DVector<f64>,
    /// Inequality multipliers (zero for inactive rows).
    pub ineq_multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

impl QpSolution {
    /// Norm of `H x + f + A^T nu + G^T mu`.
    pub fn stationarity_residual(&self, qp: &QpProblem) -> f64 {
        let mut r = &qp.h * &self.x + &qp.f;
        if qp.a_eq.nrows() > 0 {
            r += qp.a_eq.transpose() * &self.eq_multipliers;
        }
        if qp.g_in.nrows() > 0 {
            r += qp.g_in.transpose() * &self.ineq_multipliers;
        }
        r.norm()
    }

    pub fn equality_residual(&self, qp: &QpProblem) -> f64 {
        if qp.a_eq.nrows() == 0 {
            return 0.0;
        }
        (&qp.a_eq * &self.x - &qp.b_eq).amax()
    }

    pub fn max_violation(&self, qp: &QpProblem) -> f64 {
        if qp.g_in.nrows() == 0 {
            return 0.0;
        }
        (&qp.g_in * &self.x - &qp.h_in).max().max(0.0)
    }

    pub fn complementarity(&self, qp: &QpProblem) -> f64 {
        if qp.g_in.nrows() == 0 {
            return 0.0;
        }
        let slack = &qp.g_in * &self.x - &qp.h_in;
        slack.component_mul(&self.ineq_multipliers).amax()
    }
}

const RANK_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-11;

/// Normalizes rows to unit length; returns the scaled rows, rhs and scales.
fn normalize_rows(m: &DMatrix<f64>, v: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, Vec<f64>) {
    let mut m = m.clone();
    let mut v = v.clone();
    let mut scales = Vec::with_capacity(m.nrows());
    for i in 0..m.nrows() {
        let n = m.row(i).norm();
        let s = if n > 0.0 { 1.0 / n } else { 1.0 };
        m.row_mut(i).scale_mut(s);
        v[i] *= s;
        scales.push(s);
    }
    (m, v, scales)
}

/// Drops linearly dependent equality rows; errors on inconsistent ones.
fn independent_rows(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Vec<usize>> {
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..a.nrows() {
        let row = a.row(i).transpose();
        if row.norm() == 0.0 {
            if b[i].abs() > RANK_TOL {
                return Err(Error::RankDeficient(format!("zero equality row {i} with rhs {}", b[i])));
            }
            continue;
        }
        if kept.is_empty() {
            kept.push(i);
            continue;
        }
        let k = DMatrix::from_fn(kept.len(), a.ncols(), |r, c| a[(kept[r], c)]);
        let gram = &k * k.transpose();
        let y = gram.clone().lu().solve(&(&k * &row));
        let dependent = match &y {
            Some(y) => (k.transpose() * y - &row).norm() < 1e-9 * row.norm(),
            None => false,
        };
        if dependent {
            let y = y.unwrap();
            let kb = DVector::from_iterator(kept.len(), kept.iter().map(|&r| b[r]));
            if (y.dot(&kb) - b[i]).abs() > 1e-8 * (1.0 + b[i].abs()) {
                return Err(Error::Infeasible {
                    segment: 0,
                    reason: format!("equality row {i} conflicts with earlier constraints"),
                });
            }
        } else {
            kept.push(i);
        }
    }
    Ok(kept)
}

struct Kkt<'a> {
    h: &'a DMatrix<f64>,
    a: &'a DMatrix<f64>,
    g: &'a DMatrix<f64>,
}

impl Kkt<'_> {
    /// Solves `[H N^T; N 0] [x; y] = [r1; r2]` where `N` stacks the equality
    /// rows and the working-set inequality rows.
    fn solve(&self, active: &[usize], r1: &DVector<f64>, r2: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = self.h.nrows();
        let me = self.a.nrows();
        let m = me + active.len();
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(self.h);
        for (row, src) in (0..me).map(|i| self.a.row(i)).chain(active.iter().map(|&i| self.g.row(i))).enumerate() {
            k.view_mut((n + row, 0), (1, n)).copy_from(&src);
            k.view_mut((0, n + row), (n, 1)).copy_from(&src.transpose());
        }
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(r1);
        rhs.rows_mut(n, m).copy_from(r2);
        let sol = k.lu().solve(&rhs).ok_or_else(|| Error::RankDeficient("singular KKT matrix".into()))?;
        Ok((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
    }
}

/// Solves the QP. Ties among equally violated constraints go to the lowest index.
pub fn solve_qp(qp: &QpProblem) -> Result<QpSolution> {
    let n = qp.n();
    if qp.f.len() != n || qp.a_eq.ncols() != n || qp.g_in.ncols() != n {
        return Err(Error::invalid("QP dimension mismatch"));
    }
    let (a_all, b_all, eq_scale) = normalize_rows(&qp.a_eq, &qp.b_eq);
    let kept = independent_rows(&a_all, &b_all)?;
    let a = DMatrix::from_fn(kept.len(), n, |r, c| a_all[(kept[r], c)]);
    let b = DVector::from_iterator(kept.len(), kept.iter().map(|&r| b_all[r]));
    let (g, hv, in_scale) = normalize_rows(&qp.g_in, &qp.h_in);
    let kkt = Kkt { h: &qp.h, a: &a, g: &g };
    let me = a.nrows();
    let mi = g.nrows();

    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let (mut x, _) = kkt.solve(&active, &(-&qp.f), &b)?;

    let max_iter = 50 * (n + mi + 1);
    let mut iterations = 0;
    'outer: loop {
        // Most violated inactive constraint.
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..mi {
            if active.contains(&i) {
                continue;
            }
            let v = g.row(i).dot(&x.transpose()) - hv[i];
            if v > FEAS_TOL * (1.0 + hv[i].abs()) && pick.is_none_or(|(_, best)| v > best) {
                pick = Some((i, v));
            }
        }
        let Some((p, _)) = pick else { break };
        let np = g.row(p).transpose();
        let mut tp = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::SolverStalled { iterations });
            }
            let (z, r) = kkt.solve(&active, &(-&np), &DVector::zeros(me + active.len()))?;
            let r_act = r.rows(me, active.len());
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, (&uj, &rj)) in u.iter().zip(r_act.iter()).enumerate() {
                if rj < 0.0 {
                    let t = -uj / rj;
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let nz = np.dot(&z);
            let t2 = if z.norm() > 1e-12 && nz < 0.0 { -(np.dot(&x) - hv[p]) / nz } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Infeasible { segment: 0, reason: format!("inequality {p} cannot be satisfied") });
            }
            if t2.is_finite() {
                x += t * &z;
            }
            for (uj, rj) in u.iter_mut().zip(r_act.iter()) {
                *uj += t * rj;
            }
            tp += t;
            if t2 <= t1 {
                active.push(p);
                u.push(tp);
                continue 'outer;
            }
            let j = drop.expect("partial step has a blocking multiplier");
            active.remove(j);
            u.remove(j);
        }
    }

    // Polish: exact solve on the final working set.
    let mut rhs2 = DVector::zeros(me + active.len());
    rhs2.rows_mut(0, me).copy_from(&b);
    for (k, &i) in active.iter().enumerate() {
        rhs2[me + k] = hv[i];
    }
    let (x, y) = kkt.solve(&active, &(-&qp.f), &rhs2)?;

    // Undo the row scaling on the multipliers.
    let mut eq_multipliers = DVector::zeros(qp.a_eq.nrows());
    for (k, &row) in kept.iter().enumerate() {
        eq_multipliers[row] = y[k] * eq_scale[row];
    }
    let mut ineq_multipliers = DVector::zeros(mi);
    for (k, &i) in active.iter().enumerate() {
        ineq_multipliers[i] = y[me + k] * in_scale[i];
    }
    let mut active_sorted = active.clone();
    active_sorted.sort_unstable();
    Ok(QpSolution { x, eq_multipliers, ineq_multipliers, active: active_sorted, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_kkt(qp: &QpProblem, sol: &QpSolution) {
        assert!(sol.stationarity_residual(qp) < 1e-8, "stationarity {}", sol.stationarity_residual(qp));
        assert!(sol.equality_residual(qp) < 1e-8);
        assert!(sol.max_violation(qp) < 1e-8);
        assert!(sol.ineq_multipliers.iter().all(|&m| m >= -1e-10));
        assert!(sol.complementarity(qp) < 1e-8);
    }

    #[test]
    fn unconstrained_minimum() {
        let qp = QpProblem {
            h: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0])),
            f: DVector::from_vec(vec![-2.0, -4.0]),
            a_eq: DMatrix::zeros(0, 2),
            b_eq: DVector::zeros(0),
            g_in: DMatrix::zeros(0, 2),
            h_in: DVector::zeros(0),
        };
        let sol = solve_qp(&qp).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-14 && (sol.x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn projection_onto_box_with_equality() {
        // min |x - (2, 2, 2)|^2  s.t. x0 + x1 + x2 = 1, x <= 0.5, -x <= 0
        let qp = QpProblem {
            h: DMatrix::identity(3, 3) * 2.0,
            f: DVector::from_vec(vec![-4.0, -4.0, -4.0]),
            a_eq: DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
            b_eq: DVector::from_vec(vec![1.0]),
            g_in: DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, -1.0, 0.0]),
            h_in: DVector::from_vec(vec![0.2, 0.0]),
        };
        let sol = solve_qp(&qp).unwrap();
        check_kkt(&qp, &sol);
        assert!((sol.x[0] - 0.2).abs() < 1e-12);
        assert!((sol.x[1] - 0.4).abs() < 1e-12);
        assert_eq!(sol.active, vec![0]);
    }

    #[test]
    fn redundant_equalities_are_dropped() {
        let qp = QpProblem {
            h: DMatrix::identity(2, 2),
            f: DVector::zeros(2),
            a_eq: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            b_eq: DVector::from_vec(vec![1.0, 2.0]),
            g_in: DMatrix::zeros(0, 2),
            h_in: DVector::zeros(0),
        };
        let sol = solve_qp(&qp).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-12);
        check_kkt(&qp, &sol);
    }

    #[test]
    fn conflicting_constraints() {
        let mut qp = QpProblem {
            h: DMatrix::identity(2, 2),
            f: DVector::zeros(2),
            a_eq: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            b_eq: DVector::from_vec(vec![1.0, 3.0]),
            g_in: DMatrix::zeros(0, 2),
            h_in: DVector::zeros(0),
        };
        assert!(matches!(solve_qp(&qp), Err(Error::Infeasible { .. })));
        qp.b_eq[1] = 2.0;
        qp.g_in = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        qp.h_in = DVector::from_vec(vec![-1.0, -1.0]);
        assert!(matches!(solve_qp(&qp), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn degenerate_active_constraints() {
        // Two identical inequality rows must not break the working set.
        let qp = QpProblem {
            h: DMatrix::identity(2, 2),
            f: DVector::from_vec(vec![-3.0, -3.0]),
            a_eq: DMatrix::zeros(0, 2),
            b_eq: DVector::zeros(0),
            g_in: DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 0.0]),
            h_in: DVector::from_vec(vec![1.0, 1.0, 0.25]),
        };
        let sol = solve_qp(&qp).unwrap();
        check_kkt(&qp, &sol);
        assert!((sol.x[0] - 0.25).abs() < 1e-10);
        assert!((sol.x[1] - 0.75).abs() < 1e-10);
    }
}
