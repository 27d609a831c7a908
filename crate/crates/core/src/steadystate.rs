//! Economically optimal steady state restricted to a zone.

use std::fmt;

use log::info;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, ZempcError};
use crate::interval::IntervalBox;
use crate::sysmodel::{EconomicCost, PlantModel};

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub x_s: Vec<f64>,
    pub u_s: Vec<f64>,
    /// Economic cost at the steady state.
    pub cost: f64,
    /// Scaled fixed-point residual `|f(x_s, u_s, 0) - x_s|_inf`.
    pub residual: f64,
}

impl fmt::Display for SteadyState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x_s={:?} u_s={:?} cost={:.6}", self.x_s, self.u_s, self.cost)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateOptions {
    /// Grid points per input axis for the global search.
    pub grid_points: usize,
    /// Smallest input step of the polishing descent.
    pub polish_tol: f64,
    pub newton_max_iter: usize,
    pub picard_iters: usize,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self { grid_points: 200, polish_tol: 1e-10, newton_max_iter: 60, picard_iters: 500 }
    }
}

fn scaled_residual(model: &PlantModel, x: &[f64], u: &[f64], zero: &[f64]) -> Option<f64> {
    let fx = model.step(x, u, zero).ok()?;
    Some(
        fx.iter()
            .zip(x)
            .enumerate()
            .map(|(i, (a, b))| (a - b).abs() / model.state_scale.get(i).copied().unwrap_or(1.0))
            .fold(0.0, f64::max),
    )
}

fn newton_fixed_point(model: &PlantModel, u: &[f64], x0: &[f64], max_iter: usize) -> Option<Vec<f64>> {
    let n = model.n_x;
    let zero = vec![0.0; model.n_w];
    let scale = |i: usize| model.state_scale.get(i).copied().unwrap_or(1.0);
    let resid = |x: &[f64]| -> Option<DVector<f64>> {
        let fx = model.step(x, u, &zero).ok()?;
        Some(DVector::from_iterator(n, (0..n).map(|i| (fx[i] - x[i]) / scale(i))))
    };
    let mut x = x0.to_vec();
    let mut r = resid(&x)?;
    for _ in 0..max_iter {
        let norm = r.amax();
        if norm <= 1e-13 {
            return Some(x);
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * scale(j);
            let mut p = x.clone();
            p[j] += h;
            let mut m = x.clone();
            m[j] -= h;
            let (rp, rm) = (resid(&p)?, resid(&m)?);
            jac.set_column(j, &((rp - rm) / (2.0 * h / scale(j))));
        }
        let dz = jac.lu().solve(&(-&r))?;
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = (0..n).map(|i| x[i] + alpha * dz[i] * scale(i)).collect();
            if let Some(rt) = resid(&trial) {
                if rt.amax() < (1.0 - 1e-4 * alpha) * norm || rt.amax() <= 1e-13 {
                    x = trial;
                    r = rt;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-4 {
                return None;
            }
        }
    }
    (r.amax() <= 1e-10).then_some(x)
}

fn picard_fixed_point(model: &PlantModel, u: &[f64], x0: &[f64], iters: usize) -> Option<Vec<f64>> {
    let zero = vec![0.0; model.n_w];
    let mut x = x0.to_vec();
    for _ in 0..iters {
        x = model.step(&x, u, &zero).ok()?;
    }
    (scaled_residual(model, &x, u, &zero)? <= 1e-10).then_some(x)
}

fn initial_guesses(zone: &IntervalBox) -> Vec<Vec<f64>> {
    let mut g = if zone.dim() <= 3 { zone.uniform_grid(3) } else { zone.vertices() };
    g.push(zone.center());
    g
}

struct Searcher<'a> {
    model: &'a PlantModel,
    zone: &'a IntervalBox,
    cost: &'a EconomicCost,
    opts: SteadyStateOptions,
}

impl Searcher<'_> {
    /// Cheapest fixed point inside the zone for input `u`, trying `warm` first.
    fn best_at(&self, u: &[f64], warm: Option<&[f64]>) -> Option<(f64, Vec<f64>)> {
        let mut found: Vec<Vec<f64>> = Vec::new();
        let mut consider = |x: Vec<f64>| {
            if self.zone.contains(&x) {
                found.push(x);
            }
        };
        if let Some(w) = warm {
            if let Some(x) = newton_fixed_point(self.model, u, w, self.opts.newton_max_iter) {
                consider(x);
                return found.pop().map(|x| ((self.cost)(&x, u), x));
            }
        }
        for g in initial_guesses(self.zone) {
            match newton_fixed_point(self.model, u, &g, self.opts.newton_max_iter) {
                Some(x) => consider(x),
                None => {
                    if let Some(x) = picard_fixed_point(self.model, u, &g, self.opts.picard_iters) {
                        consider(x);
                    }
                }
            }
        }
        found
            .into_iter()
            .map(|x| ((self.cost)(&x, u), x))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

/// Minimises the economic cost over fixed points `x = f(x, u, 0)` with `x` in `zone`
/// and `u` in `input_box`.
///
/// A uniform input grid locates the best feasible pair (ties go to the smallest
/// input in grid order); a shrinking-step coordinate descent then refines `u`.
pub fn solve_steady_state(
    model: &PlantModel,
    zone: &IntervalBox,
    input_box: &IntervalBox,
    cost: &EconomicCost,
    opts: &SteadyStateOptions,
) -> Result<SteadyState> {
    if zone.dim() != model.n_x || input_box.dim() != model.n_u {
        return Err(ZempcError::Config("steady-state boxes do not match the model dimensions".into()));
    }
    let search = Searcher { model, zone, cost, opts: *opts };
    let grid = input_box.uniform_grid(opts.grid_points.max(2));
    let results: Vec<Option<(f64, Vec<f64>)>> = grid.par_iter().map(|u| search.best_at(u, None)).collect();
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for (u, r) in grid.iter().zip(results) {
        if let Some((c, x)) = r {
            if best.as_ref().is_none_or(|b| c < b.0) {
                best = Some((c, x, u.clone()));
            }
        }
    }
    let Some((mut c, mut x, mut u)) = best else {
        return Err(ZempcError::Infeasible(format!("no fixed point of the nominal dynamics lies in {zone}")));
    };

    let mut step: Vec<f64> = (0..model.n_u)
        .map(|i| input_box.width(i) / (opts.grid_points.max(2) - 1) as f64)
        .collect();
    for i in 0..model.n_u {
        while step[i] >= opts.polish_tol {
            let mut moved = false;
            for dir in [-1.0, 1.0] {
                let mut trial = u.clone();
                trial[i] = (u[i] + dir * step[i]).clamp(input_box.lo()[i], input_box.hi()[i]);
                if trial[i] == u[i] {
                    continue;
                }
                if let Some((tc, tx)) = search.best_at(&trial, Some(&x)) {
                    if tc < c {
                        (c, x, u) = (tc, tx, trial);
                        moved = true;
                        break;
                    }
                }
            }
            if !moved {
                step[i] *= 0.5;
            }
        }
    }

    let residual = scaled_residual(model, &x, &u, &vec![0.0; model.n_w]).unwrap_or(f64::INFINITY);
    let on_face = (0..zone.dim()).any(|i| {
        let tol = 1e-6 * zone.width(i).max(1e-12);
        (x[i] - zone.lo()[i]).abs() <= tol || (x[i] - zone.hi()[i]).abs() <= tol
    });
    if on_face {
        info!(
            "steady state {x:?} lies on the boundary of {zone}; consider a smaller zone for the terminal state"
        );
    }
    Ok(SteadyState { x_s: x, u_s: u, cost: c, residual })
}
