//! Clamped B-spline curves on `[0, 1]` and the quadratic forms used by the
//! spatial path optimization.
//!
//! A curve is `r(s) = sum_i c_i N_i(s)` with `n_c` control points `c_i` in
//! R^3. Every derivative of the curve is linear in the control points, so
//! integrated squared derivatives are quadratic forms `c_f^T M c_f` applied
//! per axis.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Degree and knot vector of a clamped B-spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub degree: usize,
    pub knots: Vec<f64>,
}

impl SplineBasis {
    /// Clamped basis on `[0, 1]` with uniformly spaced interior knots.
    pub fn uniform(degree: usize, n_coeffs: usize) -> Result<Self> {
        if n_coeffs < degree + 1 {
            return Err(Error::invalid(format!(
                "need at least {} coefficients for degree {degree}, got {n_coeffs}",
                degree + 1
            )));
        }
        let n_interior = n_coeffs - degree - 1;
        let mut knots = vec![0.0; degree + 1];
        for i in 1..=n_interior {
            knots.push(i as f64 / (n_interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(Self { degree, knots })
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.degree;
        let k = &self.knots;
        if k.len() < 2 * (p + 1) {
            return Err(Error::invalid("knot vector too short for the degree"));
        }
        if k.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("knots must be nondecreasing"));
        }
        let first_ok = k[..=p].iter().all(|&v| v == 0.0);
        let last_ok = k[k.len() - p - 1..].iter().all(|&v| v == 1.0);
        if !first_ok || !last_ok {
            return Err(Error::invalid("knot vector must be clamped to [0, 1]"));
        }
        let interior = &k[p + 1..k.len() - p - 1];
        if interior.windows(2).any(|w| w[1] <= w[0]) || interior.iter().any(|&v| v <= 0.0 || v >= 1.0) {
            return Err(Error::invalid("interior knots must be distinct and inside (0, 1)"));
        }
        Ok(())
    }

    pub fn n_coeffs(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Index `i` of the knot span `[t_i, t_{i+1})` containing `s`; the last
    /// nonempty span is used at `s = 1`.
    pub fn find_span(&self, s: f64) -> usize {
        let p = self.degree;
        let n = self.n_coeffs();
        if s >= self.knots[n] {
            return n - 1;
        }
        if s <= self.knots[p] {
            return p;
        }
        // Binary search over the active knot range.
        let (mut lo, mut hi) = (p, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if s < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values of all basis functions and their derivatives up to `order` at
    /// `s`; row `k` of the result holds the `k`-th derivatives of
    /// `N_0 .. N_{n_c - 1}`.
    pub fn basis_derivatives(&self, s: f64, order: usize) -> Result<Vec<Vec<f64>>> {
        let p = self.degree;
        if order > p {
            return Err(Error::OrderTooHigh { order, degree: p });
        }
        let span = self.find_span(s);
        let local = local_basis_derivatives(&self.knots, p, span, s, order);
        let n = self.n_coeffs();
        Ok(local
            .into_iter()
            .map(|row| {
                let mut full = vec![0.0; n];
                for (j, v) in row.into_iter().enumerate() {
                    full[span - p + j] = v;
                }
                full
            })
            .collect())
    }

    /// Row vector mapping a coefficient column to the `order`-th derivative at `s`.
    pub fn basis_row(&self, s: f64, order: usize) -> Result<Vec<f64>> {
        Ok(self.basis_derivatives(s, order)?.swap_remove(order))
    }

    /// Knot spans of nonzero length.
    fn spans(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.knots.windows(2).filter(|w| w[1] > w[0]).map(|w| (w[0], w[1]))
    }

    /// Gram matrix `M_ij = int_0^1 N_i^(k)(s) N_j^(k)(s) ds`, exact by
    /// Gauss-Legendre quadrature per span.
    pub fn derivative_gram(&self, order: usize) -> Result<QuadraticForm> {
        let p = self.degree;
        if order > p {
            return Err(Error::OrderTooHigh { order, degree: p });
        }
        let n = self.n_coeffs();
        let (nodes, weights) = gauss_legendre((2 * p + 1).div_ceil(2));
        let mut m = DMatrix::zeros(n, n);
        for (a, b) in self.spans() {
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in nodes.iter().zip(&weights) {
                let s = mid + half * x;
                let row = self.basis_row(s, order)?;
                for i in 0..n {
                    if row[i] == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        m[(i, j)] += w * half * row[i] * row[j];
                    }
                }
            }
        }
        Ok(QuadraticForm { matrix: m })
    }
}

/// Nonzero basis functions `N_{span-p} .. N_span` and derivatives at `s`
/// (triangular table with derivative recurrences).
fn local_basis_derivatives(knots: &[f64], p: usize, span: usize, s: f64, order: usize) -> Vec<Vec<f64>> {
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = s - knots[span + 1 - j];
        right[j] = knots[span + j] - s;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    let mut ders = vec![vec![0.0; p + 1]; order + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = vec![vec![0.0; p + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=order {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    // k-th derivatives carry the factor p (p-1) ... (p-k+1).
    let mut factor = 1.0;
    for (k, row) in ders.iter_mut().enumerate().skip(1) {
        factor *= (p + 1 - k) as f64;
        for v in row.iter_mut() {
            *v *= factor;
        }
    }
    ders
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            if n == 0 {
                break;
            }
            for k in 2..=n {
                let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = pk;
            }
            let pn = if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Symmetric positive semidefinite matrix applied per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub matrix: DMatrix<f64>,
}

impl QuadraticForm {
    pub fn value(&self, c: &DVector<f64>) -> f64 {
        c.dot(&(&self.matrix * c))
    }

    /// Sum of the form over the three coordinate columns of a path.
    pub fn path_value(&self, path: &SplinePath) -> f64 {
        (0..3).map(|axis| self.value(&path.axis_coeffs(axis))).sum()
    }
}

/// `M` with `c^T M c = int_0^1 f'''(s)^2 ds`.
pub fn jerk_gram(basis: &SplineBasis) -> Result<QuadraticForm> {
    if basis.degree < 3 {
        return Err(Error::OrderTooHigh { order: 3, degree: basis.degree });
    }
    basis.derivative_gram(3)
}

/// `M` with `c^T M c = int_0^1 f'(s)^2 ds`, the squared-length surrogate.
pub fn arclength_surrogate_gram(basis: &SplineBasis) -> Result<QuadraticForm> {
    if basis.degree < 1 {
        return Err(Error::OrderTooHigh { order: 1, degree: basis.degree });
    }
    basis.derivative_gram(1)
}

/// A clamped B-spline space curve on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplinePath {
    pub degree: usize,
    pub knots: Vec<f64>,
    /// One `[x, y, z]` row per control point.
    pub coeffs: Vec<[f64; 3]>,
}

impl SplinePath {
    pub fn new(basis: SplineBasis, coeffs: Vec<[f64; 3]>) -> Result<Self> {
        basis.validate()?;
        if coeffs.len() != basis.n_coeffs() {
            return Err(Error::invalid(format!("expected {} coefficients, got {}", basis.n_coeffs(), coeffs.len())));
        }
        Ok(Self { degree: basis.degree, knots: basis.knots, coeffs })
    }

    /// Straight segment `a -> b` with uniform parameter speed (control points
    /// at the Greville abscissae).
    pub fn line(basis: SplineBasis, a: Vector3<f64>, b: Vector3<f64>) -> Result<Self> {
        let p = basis.degree;
        let coeffs = (0..basis.n_coeffs())
            .map(|i| {
                let g = basis.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64;
                let v = a + (b - a) * g;
                [v.x, v.y, v.z]
            })
            .collect();
        Self::new(basis, coeffs)
    }

    pub fn basis(&self) -> SplineBasis {
        SplineBasis { degree: self.degree, knots: self.knots.clone() }
    }

    pub fn n_coeffs(&self) -> usize {
        self.coeffs.len()
    }

    pub fn axis_coeffs(&self, axis: usize) -> DVector<f64> {
        DVector::from_iterator(self.coeffs.len(), self.coeffs.iter().map(|c| c[axis]))
    }

    /// `deriv_order`-th derivative with respect to `s`, evaluated through the
    /// derivative-spline recursion followed by de Boor's algorithm.
    pub fn eval(&self, s: f64, deriv_order: usize) -> Result<Vector3<f64>> {
        if deriv_order > self.degree {
            return Err(Error::OrderTooHigh { order: deriv_order, degree: self.degree });
        }
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::invalid(format!("path parameter {s} outside [0, 1]")));
        }
        let mut knots: &[f64] = &self.knots;
        let mut ctrl: Vec<Vector3<f64>> = self.coeffs.iter().map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        let mut p = self.degree;
        for _ in 0..deriv_order {
            ctrl = (0..ctrl.len() - 1)
                .map(|i| {
                    let dt = knots[i + p + 1] - knots[i + 1];
                    if dt > 0.0 {
                        (ctrl[i + 1] - ctrl[i]) * (p as f64 / dt)
                    } else {
                        Vector3::zeros()
                    }
                })
                .collect();
            knots = &knots[1..knots.len() - 1];
            p -= 1;
        }
        Ok(de_boor(knots, p, &ctrl, s))
    }

    /// Position, first and second derivative at `s`.
    pub fn eval_upto2(&self, s: f64) -> Result<[Vector3<f64>; 3]> {
        Ok([self.eval(s, 0)?, self.eval(s, 1)?, self.eval(s, 2)?])
    }

    /// Applies `x -> rot * x + shift` to the curve (B-splines are affine invariant).
    pub fn transformed(&self, rot: &nalgebra::Matrix3<f64>, shift: &Vector3<f64>) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| {
                let v = rot * Vector3::new(c[0], c[1], c[2]) + shift;
                [v.x, v.y, v.z]
            })
            .collect();
        Self { degree: self.degree, knots: self.knots.clone(), coeffs }
    }
}

fn de_boor(knots: &[f64], p: usize, ctrl: &[Vector3<f64>], s: f64) -> Vector3<f64> {
    let basis = SplineBasis { degree: p, knots: knots.to_vec() };
    let k = basis.find_span(s);
    let mut d: Vec<Vector3<f64>> = (0..=p).map(|j| ctrl[j + k - p]).collect();
    for r in 1..=p {
        for j in (r..=p).rev() {
            let i = j + k - p;
            let denom = knots[i + p + 1 - r] - knots[i];
            let alpha = if denom > 0.0 { (s - knots[i]) / denom } else { 0.0 };
            d[j] = d[j - 1] * (1.0 - alpha) + d[j] * alpha;
        }
    }
    d[p]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> SplineBasis {
        SplineBasis::uniform(5, 12).unwrap()
    }

    fn random_path() -> SplinePath {
        let coeffs = (0..12)
            .map(|i| {
                let t = i as f64;
                [(0.7 * t).sin(), (1.3 * t).cos() * 0.5, 0.1 * t * t - t]
            })
            .collect();
        SplinePath::new(basis(), coeffs).unwrap()
    }

    /// Cox-de Boor recursion, independent of the evaluation code path.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, s: f64) -> f64 {
        if p == 0 {
            let last = knots[i + 1] == 1.0 && s == 1.0 && knots[i] < 1.0;
            return if (knots[i] <= s && s < knots[i + 1]) || last { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (s - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, s);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - s) / d2 * cox_de_boor(knots, i + 1, p - 1, s);
        }
        v
    }

    #[test]
    fn uniform_knots_are_clamped() {
        let b = basis();
        assert_eq!(b.knots.len(), 18);
        assert_eq!(b.n_coeffs(), 12);
        assert!(b.validate().is_ok());
        assert!(SplineBasis::uniform(5, 4).is_err());
    }

    #[test]
    fn constant_curve() {
        let path = SplinePath::new(basis(), vec![[1.0, 2.0, 3.0]; 12]).unwrap();
        for s in [0.0, 0.31, 0.77, 1.0] {
            assert!((path.eval(s, 0).unwrap() - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-14);
            assert!(path.eval(s, 1).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn clamped_endpoints() {
        let path = random_path();
        let c0 = path.coeffs[0];
        let cn = path.coeffs[11];
        assert!((path.eval(0.0, 0).unwrap() - Vector3::new(c0[0], c0[1], c0[2])).norm() < 1e-14);
        assert!((path.eval(1.0, 0).unwrap() - Vector3::new(cn[0], cn[1], cn[2])).norm() < 1e-14);
    }

    #[test]
    fn evaluation_matches_cox_de_boor_oracle() {
        let path = random_path();
        for s in [0.0, 0.37, 0.5, 0.999, 1.0] {
            let mut oracle = Vector3::zeros();
            for (i, c) in path.coeffs.iter().enumerate() {
                oracle += Vector3::new(c[0], c[1], c[2]) * cox_de_boor(&path.knots, i, 5, s);
            }
            assert!((path.eval(s, 0).unwrap() - oracle).norm() < 1e-12, "s = {s}");
        }
    }

    #[test]
    fn basis_rows_agree_with_derivative_recursion() {
        let path = random_path();
        let b = path.basis();
        for s in [0.0, 0.123, 0.5, 0.88, 1.0] {
            for k in 0..=5 {
                let row = b.basis_row(s, k).unwrap();
                for axis in 0..3 {
                    let c = path.axis_coeffs(axis);
                    let v: f64 = row.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
                    let e = path.eval(s, k).unwrap()[axis];
                    assert!((v - e).abs() < 1e-8 * (1.0 + e.abs()), "s={s} k={k}");
                }
            }
        }
    }

    #[test]
    fn order_too_high() {
        assert_eq!(random_path().eval(0.5, 6), Err(Error::OrderTooHigh { order: 6, degree: 5 }));
        let cubic_less = SplineBasis::uniform(2, 5).unwrap();
        assert!(matches!(jerk_gram(&cubic_less), Err(Error::OrderTooHigh { .. })));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(6);
        // int_{-1}^{1} t^10 dt = 2/11
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((v - 2.0 / 11.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gram_values() {
        let b = basis();
        let jerk = jerk_gram(&b).unwrap();
        let len = arclength_surrogate_gram(&b).unwrap();
        let flat = SplinePath::new(b.clone(), vec![[4.0, -1.0, 2.0]; 12]).unwrap();
        // The jerk Gram matrix has entries of order 1e7; compare relative to it.
        let scale = jerk.matrix.norm() * 21.0;
        assert!(jerk.path_value(&flat).abs() < 1e-12 * scale);
        assert!(len.path_value(&flat).abs() < 1e-10);
        // Straight line with uniform parameter speed: int |r'|^2 = |b - a|^2.
        let a = Vector3::new(0.0, 1.0, 0.5);
        let e = Vector3::new(2.0, -1.0, 1.5);
        let line = SplinePath::line(b.clone(), a, e).unwrap();
        assert!((len.path_value(&line) - (e - a).norm_squared()).abs() < 1e-10);
        assert!(jerk.path_value(&line).abs() < 1e-12 * jerk.matrix.norm() * 9.0);
        for m in [&jerk.matrix, &len.matrix] {
            let unit = m / m.norm();
            assert!((&unit - unit.transpose()).norm() < 1e-14);
            assert!(unit.symmetric_eigenvalues().min() > -1e-10);
        }
    }

    #[test]
    fn jerk_gram_on_single_span_cubic() {
        // Degree 3 with no interior knots is a single cubic (Bezier) span;
        // f(s) = k s^3 / 6 has f''' = k and int f'''^2 = k^2.
        let b = SplineBasis::uniform(3, 4).unwrap();
        let k = 2.5;
        // Bezier control points of k s^3/6: (0, 0, 0, k/6).
        let c = DVector::from_vec(vec![0.0, 0.0, 0.0, k / 6.0]);
        let m = jerk_gram(&b).unwrap();
        assert!((m.value(&c) - k * k).abs() < 1e-12);
    }
}
