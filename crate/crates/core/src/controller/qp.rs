//! Dense QP: `min 1/2 x'Hx + g'x` s.t. `E x = e`, `C x <= h`.
//!
//! Mehrotra predictor-corrector interior point on the slack form `C x + s = h`,
//! `s >= 0`. Sizes here are a few dozen variables, so every Newton system is
//! factored densely.
//!
//! `H` may be indefinite. Each Newton matrix `H + C'DC` is checked on the null
//! space of `E`, and `delta I` is added until it is positive definite there, so
//! the iteration heads for a local minimizer. Near a minimizer whose active
//! bounds block the negative curvature the barrier terms make `delta = 0`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub e_mat: DMatrix<f64>,
    pub e_rhs: DVector<f64>,
    pub c_mat: DMatrix<f64>,
    pub c_rhs: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Equality multipliers (sign convention `H x + g + E'nu + C'pi = 0`).
    pub nu: DVector<f64>,
    /// Inequality multipliers, `pi >= 0`.
    pub pi: DVector<f64>,
    pub iterations: usize,
    /// Inertia correction in the last Newton matrix (zero when it was convex).
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpFailure {
    /// No point met the constraints before the iterates diverged or stalled.
    Infeasible,
    /// A Newton system was singular or produced non-finite values.
    Numerical,
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a: f64 = 1.0;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            a = a.min(-v[i] / dv[i]);
        }
    }
    a
}

/// Orthonormal basis of `{x : E x = 0}`.
fn null_space(e: &DMatrix<f64>) -> DMatrix<f64> {
    let n = e.ncols();
    if e.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let eig = e.tr_mul(e).symmetric_eigen();
    let tol = 1e-12 * (1.0 + eig.eigenvalues.amax());
    let cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= tol).collect();
    DMatrix::from_fn(n, cols.len(), |r, c| eig.eigenvectors[(r, cols[c])])
}

/// Smallest `delta` (zero if possible) making `Z'(M + delta I)Z` positive definite.
fn inertia_correction(m: &DMatrix<f64>, z: &DMatrix<f64>, last: f64) -> Option<f64> {
    let reduced = z.tr_mul(&(m * z));
    if reduced.clone().cholesky().is_some() {
        return Some(0.0);
    }
    let k = reduced.nrows();
    let mut delta = if last > 0.0 { (last / 3.0).max(1e-12) } else { 1e-8 * (1.0 + m.amax()) };
    for _ in 0..60 {
        let mut trial = reduced.clone();
        for i in 0..k {
            trial[(i, i)] += delta;
        }
        if trial.cholesky().is_some() {
            return Some(delta);
        }
        delta *= 8.0;
    }
    None
}

/// `tol` bounds the dual residual (relative to `1 + |g|`) and the primal residual.
pub fn solve_qp(qp: &DenseQp, tol: f64, max_iter: usize) -> Result<QpSolution, QpFailure> {
    let n = qp.g.len();
    let p = qp.e_rhs.len();
    let m = qp.c_rhs.len();
    let mut x = DVector::zeros(n);
    let mut nu = DVector::zeros(p);
    let mut s = (&qp.c_rhs - &qp.c_mat * &x).map(|v| v.max(1.0));
    let mut pi = DVector::from_element(m, 1.0);
    let scale = 1.0 + qp.g.amax();
    let z = null_space(&qp.e_mat);
    let mut delta = 0.0;
    let mut last_delta = 0.0_f64;

    for it in 0..max_iter {
        let r_d = &qp.h * &x + &qp.g + qp.e_mat.tr_mul(&nu) + qp.c_mat.tr_mul(&pi);
        let r_e = &qp.e_mat * &x - &qp.e_rhs;
        let r_p = &qp.c_mat * &x + &s - &qp.c_rhs;
        let mu = if m > 0 { s.dot(&pi) / m as f64 } else { 0.0 };
        if !(r_d.amax().is_finite() && mu.is_finite()) {
            return Err(QpFailure::Numerical);
        }
        let primal = r_e.amax().max(if m > 0 { r_p.amax() } else { 0.0 });
        // Complementarity is held far tighter than the residuals: a bound off by
        // `mu / pi` moves the solution along any stiff direction tied to it.
        if r_d.amax() <= tol * scale && primal <= tol && mu <= 1e-3 * tol {
            return Ok(QpSolution { x, nu, pi, iterations: it, delta });
        }
        if pi.amax() > 1e12 || s.amax() > 1e12 {
            return Err(QpFailure::Infeasible);
        }

        let d = DVector::from_iterator(m, (0..m).map(|i| pi[i] / s[i]));
        let mut kkt = DMatrix::zeros(n + p, n + p);
        let mut mmat = qp.h.clone();
        for i in 0..m {
            let row = qp.c_mat.row(i);
            let w = d[i];
            for a in 0..n {
                let ra = row[a] * w;
                if ra == 0.0 {
                    continue;
                }
                for b in 0..n {
                    mmat[(a, b)] += ra * row[b];
                }
            }
        }
        delta = inertia_correction(&mmat, &z, last_delta).ok_or(QpFailure::Numerical)?;
        if delta > 0.0 {
            last_delta = delta;
            for i in 0..n {
                mmat[(i, i)] += delta;
            }
        }
        kkt.view_mut((0, 0), (n, n)).copy_from(&mmat);
        kkt.view_mut((n, 0), (p, n)).copy_from(&qp.e_mat);
        kkt.view_mut((0, n), (n, p)).copy_from(&qp.e_mat.transpose());
        let lu = kkt.lu();

        // r_c is the complementarity residual S*Pi*1 (minus centering and corrections).
        let solve = |r_c: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let t = DVector::from_iterator(m, (0..m).map(|i| (pi[i] * r_p[i] - r_c[i]) / s[i]));
            let mut rhs = DVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&(-&r_d - qp.c_mat.tr_mul(&t)));
            rhs.rows_mut(n, p).copy_from(&(-&r_e));
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dnu = sol.rows(n, p).into_owned();
            let cdx = &qp.c_mat * &dx;
            let ds = -&r_p - &cdx;
            let dpi = DVector::from_iterator(m, (0..m).map(|i| (-r_c[i] + pi[i] * r_p[i] + pi[i] * cdx[i]) / s[i]));
            Some((dx, dnu, ds, dpi))
        };

        let r_aff = s.component_mul(&pi);
        let (_, _, ds_a, dpi_a) = solve(&r_aff).ok_or(QpFailure::Numerical)?;
        let a_aff = max_step(&s, &ds_a).min(max_step(&pi, &dpi_a));
        let mu_aff = if m > 0 {
            (&s + a_aff * &ds_a).dot(&(&pi + a_aff * &dpi_a)) / m as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).min(1.0) } else { 0.0 };
        let r_c = DVector::from_iterator(m, (0..m).map(|i| s[i] * pi[i] + ds_a[i] * dpi_a[i] - sigma * mu));
        let (dx, dnu, ds, dpi) = solve(&r_c).ok_or(QpFailure::Numerical)?;
        let alpha = (0.995 * max_step(&s, &ds).min(max_step(&pi, &dpi))).min(1.0);
        x += alpha * dx;
        nu += alpha * dnu;
        s += alpha * ds;
        pi += alpha * dpi;
        for i in 0..m {
            s[i] = s[i].max(1e-300);
            pi[i] = pi[i].max(1e-300);
        }
    }
    let r_e = &qp.e_mat * &x - &qp.e_rhs;
    let r_p = &qp.c_mat * &x + &s - &qp.c_rhs;
    if r_e.amax().max(if m > 0 { r_p.amax() } else { 0.0 }) > 1e-6 {
        Err(QpFailure::Infeasible)
    } else {
        Err(QpFailure::Numerical)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_qp(h: DMatrix<f64>, g: DVector<f64>, lo: f64, hi: f64) -> DenseQp {
        let n = g.len();
        let mut c = DMatrix::zeros(2 * n, n);
        let mut r = DVector::zeros(2 * n);
        for i in 0..n {
            c[(i, i)] = 1.0;
            r[i] = hi;
            c[(n + i, i)] = -1.0;
            r[n + i] = -lo;
        }
        DenseQp { h, g, e_mat: DMatrix::zeros(0, n), e_rhs: DVector::zeros(0), c_mat: c, c_rhs: r }
    }

    #[test]
    fn unconstrained_minimum_inside_box() {
        let qp = box_qp(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0])), DVector::from_vec(vec![-1.0, 2.0]), -5.0, 5.0);
        let sol = solve_qp(&qp, 1e-10, 100).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-8 && (sol.x[1] + 0.5).abs() < 1e-8);
    }

    #[test]
    fn active_bound_and_equality() {
        // min x0^2 + x1^2 s.t. x0 + x1 = 2, x0 <= 0.5  ->  (0.5, 1.5)
        let mut qp = box_qp(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2), -10.0, 10.0);
        qp.c_rhs[0] = 0.5;
        qp.e_mat = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        qp.e_rhs = DVector::from_vec(vec![2.0]);
        let sol = solve_qp(&qp, 1e-10, 100).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-7 && (sol.x[1] - 1.5).abs() < 1e-7, "{}", sol.x);
        // Stationarity: 2x + E'nu + C'pi = 0.
        let r = &qp.h * &sol.x + &qp.g + qp.e_mat.tr_mul(&sol.nu) + qp.c_mat.tr_mul(&sol.pi);
        assert!(r.amax() < 1e-7);
        assert!((sol.nu[0] + 3.0).abs() < 1e-6 && (sol.pi[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn contradictory_constraints_fail() {
        let mut qp = box_qp(DMatrix::identity(1, 1), DVector::zeros(1), -1.0, 1.0);
        qp.e_mat = DMatrix::from_row_slice(1, 1, &[1.0]);
        qp.e_rhs = DVector::from_vec(vec![3.0]);
        assert!(solve_qp(&qp, 1e-10, 100).is_err());
    }

    #[test]
    fn indefinite_hessian_convex_on_equality_null_space() {
        // min -x0^2 + 2 x1^2 - x0 s.t. x0 = x1: reduced problem x0^2 - x0.
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0, 4.0]));
        let mut qp = box_qp(h, DVector::from_vec(vec![-1.0, 0.0]), -5.0, 5.0);
        qp.e_mat = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        qp.e_rhs = DVector::zeros(1);
        let sol = solve_qp(&qp, 1e-10, 100).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-7 && (sol.x[1] - 0.5).abs() < 1e-7, "{}", sol.x);
    }

    #[test]
    fn concave_problem_ends_at_a_bound() {
        let qp = box_qp(DMatrix::from_element(1, 1, -2.0), DVector::from_vec(vec![0.1]), -1.0, 0.5);
        let sol = solve_qp(&qp, 1e-10, 100).unwrap();
        let x = sol.x[0];
        assert!((x + 1.0).abs() < 1e-7 || (x - 0.5).abs() < 1e-7, "{x}");
        let r = &qp.h * &sol.x + &qp.g + qp.c_mat.tr_mul(&sol.pi);
        assert!(r.amax() < 1e-7);
        assert!(sol.pi.iter().all(|p| *p >= 0.0));
    }
}
