//! Spatial path QP: minimize a blend of the jerk and squared-length surrogate
//! integrals over the B-spline coefficients, subject to linear constraints on
//! the path and its `s`-derivatives at chosen parameter values.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::qp::{solve_qp, QpProblem};
use crate::bspline::{arclength_surrogate_gram, jerk_gram, SplineBasis, SplinePath};
use crate::error::{Error, Result};

/// Weight of a curvature term (integrated squared second derivative) added to
/// the normalized cost, so the jerk-only cost stays strictly convex on the
/// quadratics it cannot see. It vanishes on straight lines.
pub const CURVATURE_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Eq,
    Le,
    Ge,
}

/// `weights . r^(order)(s)  <relation>  value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConstraint {
    pub s: f64,
    pub order: usize,
    pub weights: Vector3<f64>,
    pub relation: Relation,
    pub value: f64,
}

impl PathConstraint {
    pub fn axis(s: f64, order: usize, axis: usize, relation: Relation, value: f64) -> Self {
        let mut weights = Vector3::zeros();
        weights[axis] = 1.0;
        Self { s, order, weights, relation, value }
    }

    /// `r^(order)(s) = v` as three axis equalities.
    pub fn vector(s: f64, order: usize, v: &Vector3<f64>) -> [Self; 3] {
        [0, 1, 2].map(|axis| Self::axis(s, order, axis, Relation::Eq, v[axis]))
    }
}

/// Assembles the QP over `[c_x; c_y; c_z]`.
pub fn build_spatial_qp(basis: &SplineBasis, constraints: &[PathConstraint], w: f64) -> Result<QpProblem> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("spatial weight w = {w} outside [0, 1]")));
    }
    let nc = basis.n_coeffs();
    let n = 3 * nc;
    let mut m = &jerk_gram(basis)?.matrix * w + &arclength_surrogate_gram(basis)?.matrix * (1.0 - w);
    let scale = m.amax();
    if scale > 0.0 {
        m /= scale;
    }
    let curv = basis.derivative_gram(2)?.matrix;
    m += &curv * (CURVATURE_RIDGE / curv.amax());
    let mut h = DMatrix::zeros(n, n);
    for axis in 0..3 {
        h.view_mut((axis * nc, axis * nc), (nc, nc)).copy_from(&m);
    }

    let mut eq_rows = Vec::new();
    let mut in_rows = Vec::new();
    for c in constraints {
        let basis_row = basis.basis_row(c.s, c.order)?;
        let mut row = DVector::zeros(n);
        for axis in 0..3 {
            if c.weights[axis] != 0.0 {
                for (i, v) in basis_row.iter().enumerate() {
                    row[axis * nc + i] = c.weights[axis] * v;
                }
            }
        }
        match c.relation {
            Relation::Eq => eq_rows.push((row, c.value)),
            Relation::Le => in_rows.push((row, c.value)),
            Relation::Ge => in_rows.push((-row, -c.value)),
        }
    }
    let stack = |rows: &[(DVector<f64>, f64)]| {
        let mut a = DMatrix::zeros(rows.len(), n);
        let mut b = DVector::zeros(rows.len());
        for (i, (r, v)) in rows.iter().enumerate() {
            a.row_mut(i).copy_from(&r.transpose());
            b[i] = *v;
        }
        (a, b)
    };
    let (a_eq, b_eq) = stack(&eq_rows);
    let (g_in, h_in) = stack(&in_rows);
    Ok(QpProblem { h, f: DVector::zeros(n), a_eq, b_eq, g_in, h_in })
}

pub fn path_from_solution(basis: &SplineBasis, x: &DVector<f64>) -> Result<SplinePath> {
    let nc = basis.n_coeffs();
    let coeffs = (0..nc).map(|i| [x[i], x[nc + i], x[2 * nc + i]]).collect();
    SplinePath::new(basis.clone(), coeffs)
}

/// Solves one segment's path; failures carry the segment index.
pub fn solve_spatial(
    segment: usize,
    basis: &SplineBasis,
    constraints: &[PathConstraint],
    w: f64,
) -> Result<SplinePath> {
    let qp = build_spatial_qp(basis, constraints, w).map_err(|e| e.in_segment(segment))?;
    let sol = solve_qp(&qp).map_err(|e| e.in_segment(segment))?;
    path_from_solution(basis, &sol.x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> SplineBasis {
        SplineBasis::uniform(5, 12).unwrap()
    }

    #[test]
    fn endpoint_constraints_hold() {
        let a = Vector3::new(0.0, 0.0, 0.5);
        let d = Vector3::new(2.0, 1.0, 0.6);
        let mut cons = Vec::new();
        cons.extend(PathConstraint::vector(0.0, 0, &a));
        cons.extend(PathConstraint::vector(0.0, 1, &Vector3::zeros()));
        cons.extend(PathConstraint::vector(1.0, 0, &d));
        cons.extend(PathConstraint::vector(1.0, 1, &Vector3::zeros()));
        cons.push(PathConstraint::axis(1.0, 2, 0, Relation::Eq, 0.0));
        cons.push(PathConstraint::axis(1.0, 2, 1, Relation::Eq, 0.0));
        let path = solve_spatial(3, &basis(), &cons, 0.5).unwrap();
        assert!((path.eval(1.0, 0).unwrap() - d).norm() < 1e-10);
        assert!(path.eval(1.0, 1).unwrap().norm() < 1e-9);
        assert!((path.eval(0.0, 0).unwrap() - a).norm() < 1e-10);
    }

    #[test]
    fn zero_length_segment_is_constant() {
        let p = Vector3::new(1.0, -2.0, 0.3);
        let mut cons = Vec::new();
        for order in 0..3 {
            let v = if order == 0 { p } else { Vector3::zeros() };
            cons.extend(PathConstraint::vector(0.0, order, &v));
            cons.extend(PathConstraint::vector(1.0, order, &v));
        }
        let qp = build_spatial_qp(&basis(), &cons, 0.5).unwrap();
        let sol = solve_qp(&qp).unwrap();
        let path = path_from_solution(&basis(), &sol.x).unwrap();
        for s in [0.0, 0.3, 0.77, 1.0] {
            assert!((path.eval(s, 0).unwrap() - p).norm() < 1e-9);
        }
        assert!(qp.objective(&sol.x).abs() < 1e-12);
    }

    #[test]
    fn pure_jerk_matches_direct_kkt_solve() {
        let b = basis();
        let mut cons = Vec::new();
        cons.extend(PathConstraint::vector(0.0, 0, &Vector3::new(0.0, 0.0, 1.0)));
        cons.extend(PathConstraint::vector(1.0, 0, &Vector3::new(1.5, -0.5, 2.0)));
        let qp = build_spatial_qp(&b, &cons, 1.0).unwrap();
        let sol = solve_qp(&qp).unwrap();
        let n = qp.n();
        let m = qp.a_eq.nrows();
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        k.view_mut((n, 0), (m, n)).copy_from(&qp.a_eq);
        k.view_mut((0, n), (n, m)).copy_from(&qp.a_eq.transpose());
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(n, m).copy_from(&qp.b_eq);
        let oracle = k.lu().solve(&rhs).unwrap();
        assert!((sol.x - oracle.rows(0, n)).amax() < 1e-8);
    }

    #[test]
    fn conflicting_waypoints_are_infeasible_with_segment() {
        let cons =
            [PathConstraint::axis(1.0, 0, 0, Relation::Ge, 1.0), PathConstraint::axis(1.0, 0, 0, Relation::Le, 0.0)];
        match solve_spatial(2, &basis(), &cons, 0.5) {
            Err(Error::Infeasible { segment, .. }) => assert_eq!(segment, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
