//! SQP for the multiple-shooting problem.
//!
//! Each iteration linearizes the shooting gaps, builds the Lagrangian Hessian
//! per stage by finite differences, condenses the state increments out of the QP
//! (around a stabilizing feedback, since the plant may be open-loop unstable),
//! solves it with the interior-point QP, and globalizes with an l1 merit line
//! search. All work is in scaled variables (`z / state_scale`, `v / input_scale`).
//! The exact Hessian can be indefinite; the QP solver corrects the inertia only
//! where the active bounds do not already make it convex.
//!
//! The zone penalty is carried in slack form: a slack `s` boxed in the zone, the
//! quadratic term `c2 |z - s|^2`, and for `c1 > 0` elastic variables
//! `t >= |z - s|` priced at `c1`. The closed form has a jump in curvature (and
//! for `c1 > 0` a kink) on the zone faces, which is exactly where economic optima
//! like to sit; the slack form is smooth and has the same minimum.

use log::trace;
use nalgebra::{DMatrix, DVector};

use super::ocp::{OcpSolution, SolveStatus, TerminalMode, TranscribedProblem};
use super::qp::{solve_qp, DenseQp};
use crate::error::Result;

const FD_H: f64 = 1e-5;
/// Second differences need a wider step: at `FD_H` rounding in `phi` dominates.
const FD_H2: f64 = 1e-3;
const BOUND_ACTIVE: f64 = 1e-7;

struct StageEval {
    f: Vec<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    /// Gradient of the economic stage cost.
    q: DVector<f64>,
    /// Hessian of that part plus `lambda' f`.
    w: DMatrix<f64>,
}

struct Ctx<'p, 'a> {
    p: &'p TranscribedProblem<'a>,
    n: usize,
    m: usize,
    sx: Vec<f64>,
    su: Vec<f64>,
    zero_w: Vec<f64>,
    /// Slack curvature `2 c2 scale_i^2`; empty when the zone penalty is off.
    slack_curv: Vec<f64>,
    /// Price `c1 scale_i` of the elastic variables; empty when `c1 = 0`.
    l1_price: Vec<f64>,
    zone_lo: Vec<f64>,
    zone_hi: Vec<f64>,
}

impl Ctx<'_, '_> {
    fn slacks(&self) -> bool {
        !self.slack_curv.is_empty()
    }

    fn unscale(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let z = (0..self.n).map(|i| y[i] * self.sx[i]).collect();
        let v = (0..self.m).map(|j| y[self.n + j] * self.su[j]).collect();
        (z, v)
    }

    fn f_scaled(&self, y: &[f64]) -> Result<Vec<f64>> {
        let (z, v) = self.unscale(y);
        let mut out = self.p.model.step(&z, &v, &self.zero_w)?;
        for (i, o) in out.iter_mut().enumerate() {
            *o /= self.sx[i];
        }
        Ok(out)
    }

    fn elastic(&self) -> bool {
        !self.l1_price.is_empty()
    }

    /// Stage cost without the zone terms.
    fn smooth_cost(&self, y: &[f64]) -> f64 {
        let (z, v) = self.unscale(y);
        self.p.cost.economic(&z, &v)
    }

    fn slack_penalty(&self, s: &[f64], sig: &[f64], t: &[f64]) -> f64 {
        let quad: f64 = (0..self.slack_curv.len()).map(|i| 0.5 * self.slack_curv[i] * (s[i] - sig[i]).powi(2)).sum();
        quad + (0..self.l1_price.len()).map(|i| self.l1_price[i] * t[i]).sum::<f64>()
    }

    fn clamp_to_zone(&self, s: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| s[i].clamp(self.zone_lo[i], self.zone_hi[i])).collect()
    }

    /// Optimal slacks for the current states.
    fn reset_slacks(&self, it: &mut Iterate) {
        let big_n = self.p.horizon();
        it.sig = (0..big_n).map(|k| self.clamp_to_zone(&it.s[k])).collect();
        it.t = (0..big_n).map(|k| (0..self.n).map(|i| (it.s[k][i] - it.sig[k][i]).abs()).collect()).collect();
    }

    fn stage(&self, y: &[f64], lam: &[f64]) -> Result<StageEval> {
        let (n, nv) = (self.n, self.n + self.m);
        let f = self.f_scaled(y)?;
        let phi = |f: &[f64], l: f64| l + f.iter().zip(lam).map(|(a, b)| a * b).sum::<f64>();
        let phi0 = phi(&f, self.smooth_cost(y));
        let mut jac = DMatrix::zeros(n, nv);
        let mut q = DVector::zeros(nv);
        let mut w = DMatrix::zeros(nv, nv);
        let mut yp = y.to_vec();
        for i in 0..nv {
            yp[i] = y[i] + FD_H;
            let (fp, lp) = (self.f_scaled(&yp)?, self.smooth_cost(&yp));
            yp[i] = y[i] - FD_H;
            let (fm, lm) = (self.f_scaled(&yp)?, self.smooth_cost(&yp));
            yp[i] = y[i];
            for r in 0..n {
                jac[(r, i)] = (fp[r] - fm[r]) / (2.0 * FD_H);
            }
            q[i] = (lp - lm) / (2.0 * FD_H);
            yp[i] = y[i] + FD_H2;
            let up = phi(&self.f_scaled(&yp)?, self.smooth_cost(&yp));
            yp[i] = y[i] - FD_H2;
            let dn = phi(&self.f_scaled(&yp)?, self.smooth_cost(&yp));
            yp[i] = y[i];
            w[(i, i)] = (up - 2.0 * phi0 + dn) / (FD_H2 * FD_H2);
        }
        for i in 0..nv {
            for j in (i + 1)..nv {
                let mut corner = |di: f64, dj: f64| -> Result<f64> {
                    yp[i] = y[i] + di * FD_H2;
                    yp[j] = y[j] + dj * FD_H2;
                    let r = phi(&self.f_scaled(&yp)?, self.smooth_cost(&yp));
                    yp[i] = y[i];
                    yp[j] = y[j];
                    Ok(r)
                };
                let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                    / (4.0 * FD_H2 * FD_H2);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        Ok(StageEval {
            f,
            a: jac.columns(0, n).into_owned(),
            b: jac.columns(n, self.m).into_owned(),
            q,
            w,
        })
    }
}

#[derive(Clone)]
struct Iterate {
    /// Scaled states `s(0..=N)`; `s(0)` is fixed.
    s: Vec<Vec<f64>>,
    /// Scaled inputs `a(0..N)`.
    a: Vec<Vec<f64>>,
    /// Scaled zone slacks per stage; entry 0 is the fixed projection of `s(0)`.
    sig: Vec<Vec<f64>>,
    /// Scaled elastic variables `t >= |s - sig|`, same layout as `sig`.
    t: Vec<Vec<f64>>,
}

impl Iterate {
    fn y(&self, k: usize) -> Vec<f64> {
        let mut y = self.s[k].clone();
        y.extend_from_slice(&self.a[k]);
        y
    }
}

/// `lambda` with `q_x(x_s, u_s) + A' lambda = prev`, all scaled.
fn appended_multiplier(ctx: &Ctx, prev: &[f64]) -> Option<Vec<f64>> {
    let cfg = ctx.p.config;
    let mut y: Vec<f64> = (0..ctx.n).map(|i| cfg.terminal.x_s[i] / ctx.sx[i]).collect();
    y.extend((0..ctx.m).map(|j| cfg.terminal.u_s[j] / ctx.su[j]));
    let st = ctx.stage(&y, &vec![0.0; ctx.n]).ok()?;
    let rhs = DVector::from_iterator(ctx.n, (0..ctx.n).map(|i| prev[i] - st.q[i]));
    let lam = st.a.transpose().lu().solve(&rhs)?;
    lam.iter().all(|v| v.is_finite()).then(|| lam.iter().copied().collect())
}

fn initial_iterate(ctx: &Ctx, warm: Option<&OcpSolution>) -> (Iterate, Vec<Vec<f64>>, Vec<f64>) {
    let p = ctx.p;
    let big_n = p.horizon();
    let cfg = p.config;
    let x_s = &cfg.terminal.x_s;
    let u_s = &cfg.terminal.u_s;
    let (mut z, mut v): (Vec<Vec<f64>>, Vec<Vec<f64>>);
    let (mut lam, mut nu) = (vec![vec![0.0; ctx.n]; big_n], vec![0.0; ctx.n]);
    match warm {
        Some(prev) if prev.v_star.len() == big_n => {
            z = vec![p.x_now.clone()];
            z.extend(prev.z_star[2..].iter().cloned());
            z.push(x_s.clone());
            v = prev.v_star[1..].to_vec();
            v.push(u_s.clone());
            if prev.multipliers.len() == big_n {
                lam = prev.multipliers[1..].to_vec();
                // The appended stage holds the steady state; its multiplier solves the
                // state stationarity there with the old last multiplier on the left.
                let held = appended_multiplier(ctx, &prev.multipliers[big_n - 1]);
                nu = held.clone().unwrap_or_else(|| prev.terminal_multiplier.clone());
                lam.push(held.unwrap_or_else(|| prev.multipliers[big_n - 1].clone()));
            }
        }
        _ => {
            z = vec![p.x_now.clone()];
            v = vec![u_s.clone(); big_n];
            for k in 0..big_n {
                let next = p.model.step_nominal(&z[k], &v[k]).unwrap_or_else(|_| z[k].clone());
                z.push(if k + 1 == big_n { x_s.clone() } else { cfg.state_box.clamp(&next) });
            }
        }
    }
    for vk in v.iter_mut() {
        *vk = cfg.input_box.clamp(vk);
    }
    let s: Vec<Vec<f64>> = z.iter().map(|zk| (0..ctx.n).map(|i| zk[i] / ctx.sx[i]).collect()).collect();
    let a = v.iter().map(|vk| (0..ctx.m).map(|j| vk[j] / ctx.su[j]).collect()).collect();
    let mut it = Iterate { s, a, sig: Vec::new(), t: Vec::new() };
    ctx.reset_slacks(&mut it);
    (it, lam, nu)
}

struct Linearization {
    stages: Vec<StageEval>,
    /// Scaled gaps `f(s_k, a_k) - s_{k+1}`.
    gaps: Vec<Vec<f64>>,
    terminal_gap: Vec<f64>,
    /// Gradient of the slack penalty with respect to `s_k` (zero when slacks are off).
    pen_grad: Vec<Vec<f64>>,
    /// Soft terminal gradient and curvature on `s_N`.
    soft_q: Vec<f64>,
    soft_w: f64,
}

fn linearize(ctx: &Ctx, it: &Iterate, lam: &[Vec<f64>], s_t: &[f64]) -> Result<Linearization> {
    let big_n = ctx.p.horizon();
    let stages = (0..big_n).map(|k| ctx.stage(&it.y(k), &lam[k])).collect::<Result<Vec<_>>>()?;
    let gaps = (0..big_n)
        .map(|k| (0..ctx.n).map(|i| stages[k].f[i] - it.s[k + 1][i]).collect())
        .collect();
    let terminal_gap: Vec<f64> = (0..ctx.n).map(|i| it.s[big_n][i] - s_t[i]).collect();
    let pen_grad = (0..big_n)
        .map(|k| {
            (0..ctx.n)
                .map(|i| if ctx.slacks() { ctx.slack_curv[i] * (it.s[k][i] - it.sig[k][i]) } else { 0.0 })
                .collect()
        })
        .collect();
    let (soft_q, soft_w) = match ctx.p.terminal {
        TerminalMode::Soft { weight } => (terminal_gap.iter().map(|g| 2.0 * weight * g).collect(), 2.0 * weight),
        TerminalMode::Hard => (vec![0.0; ctx.n], 0.0),
    };
    Ok(Linearization { stages, gaps, terminal_gap, pen_grad, soft_q, soft_w })
}

fn merit_parts(ctx: &Ctx, it: &Iterate, s_t: &[f64]) -> Result<(f64, f64)> {
    let big_n = ctx.p.horizon();
    let mut f = 0.0;
    let mut c1 = 0.0;
    for k in 0..big_n {
        let y = it.y(k);
        f += ctx.smooth_cost(&y) + ctx.slack_penalty(&it.s[k], &it.sig[k], &it.t[k]);
        let fk = ctx.f_scaled(&y)?;
        c1 += (0..ctx.n).map(|i| (fk[i] - it.s[k + 1][i]).abs()).sum::<f64>();
    }
    let tg: Vec<f64> = (0..ctx.n).map(|i| it.s[big_n][i] - s_t[i]).collect();
    match ctx.p.terminal {
        TerminalMode::Hard => c1 += tg.iter().map(|g| g.abs()).sum::<f64>(),
        TerminalMode::Soft { weight } => f += weight * tg.iter().map(|g| g * g).sum::<f64>(),
    }
    Ok((f, c1))
}

/// Largest equality residual in model units.
fn constraint_residual(ctx: &Ctx, lin: &Linearization) -> f64 {
    let mut r: f64 = 0.0;
    for g in &lin.gaps {
        for i in 0..ctx.n {
            r = r.max((g[i] * ctx.sx[i]).abs());
        }
    }
    if ctx.p.terminal == TerminalMode::Hard {
        for i in 0..ctx.n {
            r = r.max((lin.terminal_gap[i] * ctx.sx[i]).abs());
        }
    }
    r
}

fn project(r: f64, x: f64, lo: f64, hi: f64) -> f64 {
    if x - lo <= BOUND_ACTIVE {
        r.min(0.0)
    } else if hi - x <= BOUND_ACTIVE {
        r.max(0.0)
    } else {
        r
    }
}

/// Projected gradient of the Lagrangian (without bound terms) in scaled variables.
///
/// Slacks sit at their optimal projection when this is evaluated, so their own
/// projected gradient is zero and only states and inputs are checked.
fn kkt_residual(ctx: &Ctx, it: &Iterate, lin: &Linearization, lam: &[Vec<f64>], nu: &[f64]) -> f64 {
    let big_n = ctx.p.horizon();
    let cfg = ctx.p.config;
    let hard = ctx.p.terminal == TerminalMode::Hard;
    let mut worst: f64 = 0.0;
    for k in 0..big_n {
        let st = &lin.stages[k];
        let ra = st.b.tr_mul(&DVector::from_column_slice(&lam[k]));
        for j in 0..ctx.m {
            let r = st.q[ctx.n + j] + ra[j];
            let (lo, hi) = (cfg.input_box.lo()[j] / ctx.su[j], cfg.input_box.hi()[j] / ctx.su[j]);
            worst = worst.max(project(r, it.a[k][j], lo, hi).abs());
        }
    }
    for k in 1..=big_n {
        for i in 0..ctx.n {
            let r = if k < big_n {
                let st = &lin.stages[k];
                let at_lam: f64 = (0..ctx.n).map(|r| st.a[(r, i)] * lam[k][r]).sum();
                let r = st.q[i] + lin.pen_grad[k][i] + at_lam - lam[k - 1][i];
                if ctx.elastic() {
                    elastic_residual(ctx, r, it.s[k][i], i)
                } else {
                    r
                }
            } else {
                lin.soft_q[i] - lam[k - 1][i] + if hard { nu[i] } else { 0.0 }
            };
            let (lo, hi) = (cfg.state_box.lo()[i] / ctx.sx[i], cfg.state_box.hi()[i] / ctx.sx[i]);
            let proj = if k == big_n && hard { r } else { project(r, it.s[k][i], lo, hi) };
            worst = worst.max(proj.abs());
        }
    }
    worst
}

/// Adds the closest element of the l1 zone term's subdifferential at `s` to `r`.
fn elastic_residual(ctx: &Ctx, r: f64, s: f64, i: usize) -> f64 {
    let (lo, hi, price) = (ctx.zone_lo[i], ctx.zone_hi[i], ctx.l1_price[i]);
    if (s - hi).abs() <= BOUND_ACTIVE {
        r + (-r).clamp(0.0, price)
    } else if (s - lo).abs() <= BOUND_ACTIVE {
        r + (-r).clamp(-price, 0.0)
    } else if s > hi {
        r + price
    } else if s < lo {
        r - price
    } else {
        r
    }
}

struct QpStep {
    da: Vec<Vec<f64>>,
    ds: Vec<Vec<f64>>,
    dsig: Vec<Vec<f64>>,
    dt: Vec<Vec<f64>>,
    lam: Vec<Vec<f64>>,
    nu: Vec<f64>,
}

/// Time-varying LQR gains (`Q = I`, `R = I` in scaled variables) on the stage linearizations.
fn stabilizing_gains(lin: &Linearization, n: usize, m: usize) -> Vec<DMatrix<f64>> {
    let big_n = lin.stages.len();
    let mut p = DMatrix::<f64>::identity(n, n);
    let mut gains = vec![DMatrix::zeros(m, n); big_n];
    for k in (0..big_n).rev() {
        let (a, b) = (&lin.stages[k].a, &lin.stages[k].b);
        let btp = b.tr_mul(&p);
        let r = DMatrix::<f64>::identity(m, m) + &btp * b;
        let Some(r_inv) = r.try_inverse() else { break };
        let kk = -(r_inv * &btp * a);
        let acl = a + b * &kk;
        p = DMatrix::<f64>::identity(n, n) + kk.tr_mul(&kk) + acl.tr_mul(&(&p * &acl));
        p = (&p + p.transpose()) * 0.5;
        gains[k] = kk;
    }
    gains
}

/// Column of slack `i` at stage `k` (stages `1..N` carry slacks).
fn sig_col(ctx: &Ctx, k: usize, i: usize) -> usize {
    ctx.p.horizon() * ctx.m + (k - 1) * ctx.n + i
}

/// Column of elastic variable `i` at stage `k`, after all slacks.
fn t_col(ctx: &Ctx, k: usize, i: usize) -> usize {
    ctx.p.horizon() * ctx.m + (ctx.p.horizon() - 1 + k - 1) * ctx.n + i
}

fn qp_step(ctx: &Ctx, it: &Iterate, lin: &Linearization) -> Option<QpStep> {
    let (n, m) = (ctx.n, ctx.m);
    let big_n = ctx.p.horizon();
    let n_sig = if ctx.slacks() { (big_n - 1) * n } else { 0 };
    let n_t = if ctx.elastic() { n_sig } else { 0 };
    let nd = big_n * m + n_sig + n_t;
    let hard = ctx.p.terminal == TerminalMode::Hard;
    let cfg = ctx.p.config;

    // Inputs are parametrized as da_k = K_k ds_k + dv_k with a stabilizing gain, so
    // that ds_k = G_k d + e_k and da_k = M_k d + f_k stay bounded along the horizon
    // even where the plant is open-loop unstable.
    let gains = stabilizing_gains(lin, n, m);
    let mut g_mats = vec![DMatrix::zeros(n, nd)];
    let mut e_vecs = vec![DVector::zeros(n)];
    let mut m_mats = Vec::with_capacity(big_n);
    let mut f_vecs = Vec::with_capacity(big_n);
    for k in 0..big_n {
        let st = &lin.stages[k];
        let mut mk = &gains[k] * &g_mats[k];
        for j in 0..m {
            mk[(j, k * m + j)] += 1.0;
        }
        let fk = &gains[k] * &e_vecs[k];
        let next = &st.a * &g_mats[k] + &st.b * &mk;
        let e_next = &st.a * &e_vecs[k] + &st.b * &fk + DVector::from_column_slice(&lin.gaps[k]);
        m_mats.push(mk);
        f_vecs.push(fk);
        g_mats.push(next);
        e_vecs.push(e_next);
    }

    let mut h = DMatrix::zeros(nd, nd);
    let mut g = DVector::zeros(nd);
    for k in 0..big_n {
        let st = &lin.stages[k];
        let mut p = DMatrix::zeros(n + m, nd);
        p.view_mut((0, 0), (n, nd)).copy_from(&g_mats[k]);
        p.view_mut((n, 0), (m, nd)).copy_from(&m_mats[k]);
        let mut y0 = DVector::zeros(n + m);
        y0.rows_mut(0, n).copy_from(&e_vecs[k]);
        y0.rows_mut(n, m).copy_from(&f_vecs[k]);
        let wp = &st.w * &p;
        h += p.tr_mul(&wp);
        g += p.tr_mul(&(&st.q + &st.w * y0));
        if k >= 1 && ctx.slacks() {
            // Slack penalty in ds_k - dsig_k = (G_k - S_k) d + e_k.
            let mut diff = g_mats[k].clone();
            for i in 0..n {
                diff[(i, sig_col(ctx, k, i))] -= 1.0;
            }
            let d = DMatrix::from_diagonal(&DVector::from_column_slice(&ctx.slack_curv));
            h += diff.tr_mul(&(&d * &diff));
            let lin_term =
                DVector::from_iterator(n, (0..n).map(|i| lin.pen_grad[k][i] + ctx.slack_curv[i] * e_vecs[k][i]));
            g += diff.tr_mul(&lin_term);
            if ctx.elastic() {
                for i in 0..n {
                    g[t_col(ctx, k, i)] += ctx.l1_price[i];
                }
            }
        }
    }
    if !hard {
        let gn = &g_mats[big_n];
        h += gn.tr_mul(gn) * lin.soft_w;
        let qn = DVector::from_column_slice(&lin.soft_q) + &e_vecs[big_n] * lin.soft_w;
        g += gn.tr_mul(&qn);
    }
    h = (&h + h.transpose()) * 0.5;

    let (e_mat, e_rhs) = if hard {
        let rhs = DVector::from_iterator(n, (0..n).map(|i| -lin.terminal_gap[i] - e_vecs[big_n][i]));
        (g_mats[big_n].clone(), rhs)
    } else {
        (DMatrix::zeros(0, nd), DVector::zeros(0))
    };

    let last_state_row = if hard { big_n - 1 } else { big_n };
    let rows = 2 * big_n * m + 2 * n * last_state_row + 2 * n_sig + 3 * n_t;
    let mut c_mat = DMatrix::zeros(rows, nd);
    let mut c_rhs = DVector::zeros(rows);
    let mut r = 0;
    for k in 0..big_n {
        for j in 0..m {
            let (lo, hi) = (cfg.input_box.lo()[j] / ctx.su[j], cfg.input_box.hi()[j] / ctx.su[j]);
            let row = m_mats[k].row(j);
            c_mat.row_mut(r).copy_from(&row);
            c_rhs[r] = hi - it.a[k][j] - f_vecs[k][j];
            c_mat.row_mut(r + 1).copy_from(&(-row));
            c_rhs[r + 1] = it.a[k][j] + f_vecs[k][j] - lo;
            r += 2;
        }
    }
    if ctx.slacks() {
        for k in 1..big_n {
            for i in 0..n {
                let col = sig_col(ctx, k, i);
                c_mat[(r, col)] = 1.0;
                c_rhs[r] = ctx.zone_hi[i] - it.sig[k][i];
                c_mat[(r + 1, col)] = -1.0;
                c_rhs[r + 1] = it.sig[k][i] - ctx.zone_lo[i];
                r += 2;
            }
        }
    }
    // +-(s - sig) - t <= 0 and t >= 0, three rows per (k, i).
    let elastic_rows_start = r;
    if ctx.elastic() {
        for k in 1..big_n {
            for i in 0..n {
                let (sc, tc) = (sig_col(ctx, k, i), t_col(ctx, k, i));
                let gap = it.s[k][i] - it.sig[k][i];
                for (row, sign) in [(r, 1.0), (r + 1, -1.0)] {
                    for c in 0..nd {
                        c_mat[(row, c)] = sign * g_mats[k][(i, c)];
                    }
                    c_mat[(row, sc)] -= sign;
                    c_mat[(row, tc)] = -1.0;
                    c_rhs[row] = it.t[k][i] - sign * (gap + e_vecs[k][i]);
                }
                c_mat[(r + 2, tc)] = -1.0;
                c_rhs[r + 2] = it.t[k][i];
                r += 3;
            }
        }
    }
    let state_rows_start = r;
    for k in 1..=last_state_row {
        for i in 0..n {
            let (lo, hi) = (cfg.state_box.lo()[i] / ctx.sx[i], cfg.state_box.hi()[i] / ctx.sx[i]);
            let row = g_mats[k].row(i);
            c_mat.row_mut(r).copy_from(&row);
            c_rhs[r] = hi - it.s[k][i] - e_vecs[k][i];
            c_mat.row_mut(r + 1).copy_from(&(-row));
            c_rhs[r + 1] = it.s[k][i] + e_vecs[k][i] - lo;
            r += 2;
        }
    }

    let qp = DenseQp { h, g, e_mat, e_rhs, c_mat, c_rhs };
    let sol = solve_qp(&qp, 1e-10, 100).ok()?;

    let da: Vec<Vec<f64>> =
        (0..big_n).map(|k| (&m_mats[k] * &sol.x + &f_vecs[k]).iter().copied().collect()).collect();
    let ds: Vec<Vec<f64>> =
        (0..=big_n).map(|k| (&g_mats[k] * &sol.x + &e_vecs[k]).iter().copied().collect()).collect();
    let dsig: Vec<Vec<f64>> = (0..big_n)
        .map(|k| (0..n).map(|i| if k >= 1 && ctx.slacks() { sol.x[sig_col(ctx, k, i)] } else { 0.0 }).collect())
        .collect();
    let dt: Vec<Vec<f64>> = (0..big_n)
        .map(|k| (0..n).map(|i| if k >= 1 && ctx.elastic() { sol.x[t_col(ctx, k, i)] } else { 0.0 }).collect())
        .collect();
    let pi_elastic = |k: usize, i: usize| -> f64 {
        if !ctx.elastic() {
            return 0.0;
        }
        let row = elastic_rows_start + 3 * ((k - 1) * n + i);
        sol.pi[row] - sol.pi[row + 1]
    };
    let pi_state = |k: usize, i: usize| -> f64 {
        if k > last_state_row {
            return 0.0;
        }
        let row = state_rows_start + 2 * ((k - 1) * n + i);
        sol.pi[row] - sol.pi[row + 1]
    };
    let nu: Vec<f64> = if hard { sol.nu.iter().copied().collect() } else { vec![0.0; n] };
    let mut lam = vec![vec![0.0; n]; big_n];
    lam[big_n - 1] = (0..n)
        .map(|i| nu[i] + lin.soft_q[i] + lin.soft_w * ds[big_n][i] + pi_state(big_n, i))
        .collect();
    for k in (1..big_n).rev() {
        let st = &lin.stages[k];
        let mut y = DVector::zeros(n + m);
        for i in 0..n {
            y[i] = ds[k][i];
        }
        for j in 0..m {
            y[n + j] = da[k][j];
        }
        let wy = &st.w * y;
        lam[k - 1] = (0..n)
            .map(|i| {
                let at_lam: f64 = (0..n).map(|r| st.a[(r, i)] * lam[k][r]).sum();
                let slack = if ctx.slacks() {
                    lin.pen_grad[k][i] + ctx.slack_curv[i] * (ds[k][i] - dsig[k][i]) + pi_elastic(k, i)
                } else {
                    0.0
                };
                st.q[i] + wy[i] + slack + at_lam + pi_state(k, i)
            })
            .collect();
    }
    Some(QpStep { da, ds, dsig, dt, lam, nu })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    ctx: &Ctx,
    it: &Iterate,
    status: SolveStatus,
    iterations: usize,
    kkt: f64,
    cres: f64,
    lam: Vec<Vec<f64>>,
    nu: Vec<f64>,
) -> OcpSolution {
    let p = ctx.p;
    let mut z_star: Vec<Vec<f64>> = it.s.iter().map(|s| (0..ctx.n).map(|i| s[i] * ctx.sx[i]).collect()).collect();
    z_star[0] = p.x_now.clone();
    let v_star: Vec<Vec<f64>> = it.a.iter().map(|a| (0..ctx.m).map(|j| a[j] * ctx.su[j]).collect()).collect();
    let vars = p.pack(&v_star, &z_star);
    OcpSolution {
        objective: p.objective(&vars),
        v_star,
        z_star,
        kkt_residual: kkt,
        constraint_residual: cres,
        status,
        iterations,
        soft_terminal: matches!(p.terminal, TerminalMode::Soft { .. }),
        multipliers: lam,
        terminal_multiplier: nu,
    }
}

/// Solves the transcribed problem from the shifted warm start, or a cold rollout under `u_s`.
///
/// An infeasible QP subproblem ends the solve with `SolveStatus::Infeasible` and
/// the current iterate; running out of iterations or line-search progress returns
/// the last iterate with `SolveStatus::MaxIter`.
pub fn solve_ocp(problem: &TranscribedProblem, warm: Option<&OcpSolution>) -> Result<OcpSolution> {
    let model = problem.model;
    let (n, m) = (model.n_x, model.n_u);
    let cost = &problem.cost;
    let sx = model.state_scale.clone();
    let ctx = Ctx {
        p: problem,
        n,
        m,
        slack_curv: if cost.c1 > 0.0 || cost.c2 > 0.0 {
            (0..n).map(|i| 2.0 * cost.c2 * sx[i] * sx[i]).collect()
        } else {
            Vec::new()
        },
        l1_price: if cost.c1 > 0.0 { (0..n).map(|i| cost.c1 * sx[i]).collect() } else { Vec::new() },
        zone_lo: (0..n).map(|i| cost.zone.lo()[i] / sx[i]).collect(),
        zone_hi: (0..n).map(|i| cost.zone.hi()[i] / sx[i]).collect(),
        sx,
        su: model.input_scale.clone(),
        zero_w: vec![0.0; model.n_w],
    };
    let tol = problem.config.tolerances;
    let s_t: Vec<f64> = (0..n).map(|i| problem.config.terminal.x_s[i] / ctx.sx[i]).collect();
    let (mut it, mut lam, mut nu) = initial_iterate(&ctx, warm);
    let mut rho: f64 = 1.0;
    let mut iterations = 0;
    loop {
        ctx.reset_slacks(&mut it);
        let lin = linearize(&ctx, &it, &lam, &s_t)?;
        let cres = constraint_residual(&ctx, &lin);
        let kkt = kkt_residual(&ctx, &it, &lin, &lam, &nu);
        trace!("sqp {iterations}: kkt {kkt:.2e}, constraint {cres:.2e}, rho {rho:.2e}");
        if cres <= tol.constraint && kkt <= tol.kkt {
            return Ok(finish(&ctx, &it, SolveStatus::Optimal, iterations, kkt, cres, lam, nu));
        }
        if iterations >= tol.max_iter {
            return Ok(finish(&ctx, &it, SolveStatus::MaxIter, iterations, kkt, cres, lam, nu));
        }
        let Some(step) = qp_step(&ctx, &it, &lin) else {
            return Ok(finish(&ctx, &it, SolveStatus::Infeasible, iterations, kkt, cres, lam, nu));
        };
        iterations += 1;

        let dual_max = step.lam.iter().flatten().chain(step.nu.iter()).fold(0.0_f64, |a, b| a.max(b.abs()));
        if rho < 1.1 * dual_max || rho > 10.0 * dual_max + 1.0 {
            rho = 2.0 * dual_max + 1.0;
        }
        let (f0, c0) = merit_parts(&ctx, &it, &s_t)?;
        let phi0 = f0 + rho * c0;
        let mut slope = -rho * c0;
        for k in 0..problem.horizon() {
            let st = &lin.stages[k];
            for i in 0..n {
                slope += (st.q[i] + lin.pen_grad[k][i]) * step.ds[k][i] - lin.pen_grad[k][i] * step.dsig[k][i];
                if ctx.elastic() {
                    slope += ctx.l1_price[i] * step.dt[k][i];
                }
            }
            for j in 0..m {
                slope += st.q[n + j] * step.da[k][j];
            }
        }
        for i in 0..n {
            slope += lin.soft_q[i] * step.ds[problem.horizon()][i];
        }

        let trial_at = |alpha: f64| -> Iterate {
            let mut next = it.clone();
            for k in 0..problem.horizon() {
                for j in 0..m {
                    next.a[k][j] += alpha * step.da[k][j];
                }
                for i in 0..n {
                    next.s[k + 1][i] += alpha * step.ds[k + 1][i];
                    next.sig[k][i] += alpha * step.dsig[k][i];
                    next.t[k][i] += alpha * step.dt[k][i];
                }
            }
            next
        };
        let mut alpha = 1.0;
        let accepted = loop {
            let trial = trial_at(alpha);
            if let Ok((f, c)) = merit_parts(&ctx, &trial, &s_t) {
                // The last term absorbs rounding in the merit once steps reach solver accuracy.
                if f + rho * c <= phi0 + 1e-4 * alpha * slope.min(0.0) + 1e-12 * (1.0 + phi0.abs()) {
                    break Some(trial);
                }
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                break None;
            }
        };
        let Some(trial) = accepted else {
            return Ok(finish(&ctx, &it, SolveStatus::MaxIter, iterations, kkt, cres, lam, nu));
        };
        it = trial;
        lam = step.lam;
        nu = step.nu;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::ocp::{build_ocp, EmpcConfig};
    use crate::controller::Empc;
    use crate::interval::IntervalBox;
    use crate::steadystate::{solve_steady_state, SteadyState, SteadyStateOptions};
    use crate::sysmodel::{cstr_economic_cost, ConstraintSpec, CstrParams, PlantModel};

    fn cstr() -> PlantModel {
        PlantModel::cstr(CstrParams::default(), 0.1).unwrap()
    }

    fn terminal(model: &PlantModel) -> SteadyState {
        let zone = IntervalBox::new(vec![0.38, 349.04], vec![0.6, 350.96]).unwrap();
        let spec = ConstraintSpec::cstr_default();
        solve_steady_state(model, &zone, &spec.input_box, &cstr_economic_cost(), &SteadyStateOptions::default()).unwrap()
    }

    fn config(model: &PlantModel, horizon: usize) -> EmpcConfig {
        config_tracking(model, horizon, IntervalBox::new(vec![0.38, 348.32], vec![0.6, 351.44]).unwrap())
    }

    fn config_tracking(model: &PlantModel, horizon: usize, zone: IntervalBox) -> EmpcConfig {
        let spec = ConstraintSpec::cstr_default();
        EmpcConfig::new(
            horizon,
            0.0,
            10.0,
            zone,
            terminal(model),
            spec.state_box,
            spec.input_box,
            cstr_economic_cost(),
        )
        .unwrap()
    }

    fn assert_feasible(problem: &TranscribedProblem, sol: &OcpSolution, tol: f64) {
        let vars = problem.pack(&sol.v_star, &sol.z_star);
        let r = problem.equality_residuals(&vars).unwrap();
        assert!(r.iter().all(|e| e.abs() <= tol), "{r:?}");
        let (lo, hi) = problem.bounds();
        for i in 0..vars.len() {
            assert!(vars[i] >= lo[i] - 1e-9 && vars[i] <= hi[i] + 1e-9);
        }
    }

    #[test]
    fn transcription_dimensions() {
        let model = cstr();
        for (n, vars, eq) in [(1, 3, 4), (20, 60, 42)] {
            let cfg = config(&model, n);
            let p = build_ocp(&[0.5, 350.0], &cfg, &model);
            assert_eq!((p.n_vars(), p.n_eq()), (vars, eq));
        }
    }

    #[test]
    fn steady_candidate_costs_horizon_times_economic_cost() {
        let model = cstr();
        let cfg = config(&model, 20);
        let ss = &cfg.terminal;
        let p = build_ocp(&ss.x_s, &cfg, &model);
        let vars = p.pack(&vec![ss.u_s.clone(); 20], &vec![ss.x_s.clone(); 21]);
        assert!((p.objective(&vars) - 20.0 * ss.cost).abs() < 1e-12);
        assert!(p.equality_residuals(&vars).unwrap().iter().all(|e| e.abs() < 1e-9));
    }

    #[test]
    fn steady_start_returns_steady_input() {
        let model = cstr();
        // Tracking the zone x_s is optimal in; a wider zone pays to leave x_s.
        let mut cfg = config_tracking(&model, 20, IntervalBox::new(vec![0.38, 349.04], vec![0.6, 350.96]).unwrap());
        cfg.c1 = 1.0;
        let ss = cfg.terminal.clone();
        let p = build_ocp(&ss.x_s, &cfg, &model);
        let sol = solve_ocp(&p, None).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.v_star[0][0] - ss.u_s[0]).abs() < 1e-4, "{:?}", sol.v_star[0]);
        assert!((sol.objective - 20.0 * ss.cost).abs() < 1e-6, "{}", sol.objective);
        assert_feasible(&p, &sol, 1e-6);
    }

    #[test]
    fn start_outside_zone_costs_more_than_steady_operation() {
        let model = cstr();
        let cfg = config(&model, 20);
        let p = build_ocp(&[0.48, 348.0], &cfg, &model);
        let sol = solve_ocp(&p, None).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective > 20.0 * cfg.terminal.cost);
        assert!(sol.kkt_residual <= 1e-5 && sol.constraint_residual <= 1e-6);
        assert_feasible(&p, &sol, 1e-6);
        let last = &sol.z_star[20];
        assert!((last[0] - cfg.terminal.x_s[0]).abs() <= 1e-6 && (last[1] - cfg.terminal.x_s[1]).abs() <= 1e-6);
    }

    #[test]
    fn warm_start_reaches_the_cold_solution() {
        let model = cstr();
        let cfg = config(&model, 20);
        let x = [0.55, 349.0];
        let p = build_ocp(&x, &cfg, &model);
        let cold = solve_ocp(&p, None).unwrap();
        let warm = solve_ocp(&p, Some(&cold)).unwrap();
        assert_eq!(warm.status, SolveStatus::Optimal);
        assert!((warm.objective - cold.objective).abs() < 1e-6);
        assert!((warm.v_star[0][0] - cold.v_star[0][0]).abs() < 1e-3);
    }

    #[test]
    fn control_step_is_deterministic() {
        let model = cstr();
        let cfg = config(&model, 20);
        let run = || {
            let mut c = Empc::new(model.clone(), cfg.clone()).unwrap();
            let mut x = vec![0.7, 346.0];
            let mut us = Vec::new();
            for _ in 0..3 {
                let (u, _) = c.control_step(&x).unwrap();
                x = model.step_nominal(&x, &u).unwrap();
                us.push(u[0]);
            }
            us
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nominal_closed_loop_decreases_the_value_function() {
        let model = cstr();
        let cfg = config(&model, 20);
        let tol = cfg.tolerances.constraint;
        let mut c = Empc::new(model.clone(), cfg.clone()).unwrap();
        let mut x = vec![0.7, 346.0];
        let mut prev: Option<(f64, f64)> = None;
        for _ in 0..40 {
            let (u, d) = c.control_step(&x).unwrap();
            assert_eq!(d.status, SolveStatus::Optimal);
            assert!(!d.soft_terminal);
            if let Some((v, l)) = prev {
                assert!(d.objective <= v - l + cfg.terminal.cost + 10.0 * tol, "{} vs {}", d.objective, v - l);
            }
            prev = Some((d.objective, stage_cost_of(&cfg, &x, &u)));
            x = model.step_nominal(&x, &u).unwrap();
        }
    }

    #[test]
    fn l1_zone_weight_closed_loop_stays_optimal() {
        let model = cstr();
        let mut cfg = config(&model, 20);
        cfg.c1 = 2.0;
        let mut c = Empc::new(model.clone(), cfg.clone()).unwrap();
        let mut x = vec![0.7, 346.0];
        for _ in 0..30 {
            let (u, d) = c.control_step(&x).unwrap();
            assert_eq!(d.status, SolveStatus::Optimal);
            assert!(d.kkt_residual <= 1e-5 && d.constraint_residual <= 1e-6);
            x = model.step_nominal(&x, &u).unwrap();
        }
        assert!(cfg.tracked_zone.contains(&x), "{x:?}");
    }

    fn stage_cost_of(cfg: &EmpcConfig, x: &[f64], u: &[f64]) -> f64 {
        crate::controller::stage_cost(x, u, cfg)
    }

    /// `x` with `step_nominal(x, u) = target`, by Newton from `target`.
    fn preimage(model: &PlantModel, target: &[f64], u: f64) -> Vec<f64> {
        let mut x = target.to_vec();
        for _ in 0..50 {
            let f = model.step_nominal(&x, &[u]).unwrap();
            let r = [f[0] - target[0], f[1] - target[1]];
            if r[0].abs() < 1e-13 && r[1].abs() < 1e-11 {
                break;
            }
            let mut j = [[0.0; 2]; 2];
            for c in 0..2 {
                let h = 1e-6 * model.state_scale[c];
                let mut xp = x.clone();
                xp[c] += h;
                let mut xm = x.clone();
                xm[c] -= h;
                let (fp, fm) = (model.step_nominal(&xp, &[u]).unwrap(), model.step_nominal(&xm, &[u]).unwrap());
                for r in 0..2 {
                    j[r][c] = (fp[r] - fm[r]) / (2.0 * h);
                }
            }
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            x[0] -= (j[1][1] * r[0] - j[0][1] * r[1]) / det;
            x[1] -= (j[0][0] * r[1] - j[1][0] * r[0]) / det;
        }
        x
    }

    #[test]
    fn two_step_problem_matches_input_enumeration() {
        let model = cstr();
        let cfg = config(&model, 2);
        let x_s = cfg.terminal.x_s.clone();
        // Off-grid inputs that steer x_now to x_s in exactly two steps.
        let (u_a, u_b) = (301.87, 297.23);
        let z1 = preimage(&model, &x_s, u_b);
        let x_now = preimage(&model, &z1, u_a);
        assert!(cfg.state_box.contains(&z1) && cfg.state_box.contains(&x_now));

        let p = build_ocp(&x_now, &cfg, &model);
        let sol = solve_ocp(&p, None).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_feasible(&p, &sol, 1e-6);

        // Enumerate (v0, v1) on a 0.05 K grid. Every feasible pair lies within
        // `r` of a grid pair, whose terminal error is then at most `l_v * r`; each
        // such candidate is polished onto the terminal constraint by Newton, so
        // the polished set contains every feasible pair the grid can resolve.
        let spacing = 0.05;
        let r = spacing / 2.0 * 2f64.sqrt();
        let grid: Vec<f64> = (0..=600).map(|i| 285.0 + spacing * i as f64).collect();
        let terminal = |v: [f64; 2]| -> Option<[f64; 2]> {
            let a = model.step_nominal(&x_now, &[v[0]]).ok()?;
            let b = model.step_nominal(&a, &[v[1]]).ok()?;
            Some([(b[0] - x_s[0]) / model.state_scale[0], (b[1] - x_s[1]) / model.state_scale[1]])
        };
        let jacobian = |v: [f64; 2]| -> Option<[[f64; 2]; 2]> {
            let mut j = [[0.0; 2]; 2];
            for c in 0..2 {
                let (mut vp, mut vm) = (v, v);
                vp[c] += 1e-4;
                vm[c] -= 1e-4;
                let (fp, fm) = (terminal(vp)?, terminal(vm)?);
                for r in 0..2 {
                    j[r][c] = (fp[r] - fm[r]) / 2e-4;
                }
            }
            Some(j)
        };
        let j0 = jacobian([u_a, u_b]).unwrap();
        // Generous Lipschitz bound: twice the Frobenius norm at the known root.
        let l_v = 2.0 * j0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        let polish = |mut v: [f64; 2]| -> Option<[f64; 2]> {
            for _ in 0..40 {
                let f = terminal(v)?;
                if f[0].abs().max(f[1].abs()) < 1e-12 {
                    return Some(v);
                }
                let j = jacobian(v)?;
                let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                v[0] -= (j[1][1] * f[0] - j[0][1] * f[1]) / det;
                v[1] -= (j[0][0] * f[1] - j[1][0] * f[0]) / det;
            }
            None
        };
        let mut roots: Vec<[f64; 2]> = Vec::new();
        for &v0 in &grid {
            for &v1 in &grid {
                let Some(e) = terminal([v0, v1]) else { continue };
                if e[0].abs().max(e[1].abs()) > l_v * r {
                    continue;
                }
                if let Some(v) = polish([v0, v1]) {
                    if cfg.input_box.contains(&v[..1]) && cfg.input_box.contains(&v[1..]) && roots.iter().all(|q| (q[0] - v[0]).abs() + (q[1] - v[1]).abs() > 1e-6) {
                        roots.push(v);
                    }
                }
            }
        }
        let cost = |v: [f64; 2]| -> Option<f64> {
            let a = model.step_nominal(&x_now, &[v[0]]).ok()?;
            cfg.state_box.contains(&a).then(|| cfg.stage().eval(&x_now, &[v[0]]) + cfg.stage().eval(&a, &[v[1]]))
        };
        let best = roots.iter().filter_map(|v| cost(*v).map(|c| (c, *v))).min_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
        assert!(roots.iter().any(|v| (v[0] - u_a).abs() < 1e-6 && (v[1] - u_b).abs() < 1e-6));
        assert!((sol.objective - best.0).abs() <= 1e-6, "solver {} enumeration {} over {roots:?}", sol.objective, best.0);
        assert!((sol.v_star[0][0] - best.1[0]).abs() < 1e-3 && (sol.v_star[1][0] - best.1[1]).abs() < 1e-3);
    }
}
