use std::fmt::Write as _;

use log::{info, warn};
use rayon::prelude::*;

use super::record::{run_closed_loop, ClosedLoopRecord, Scoring, ZoneRegion};
use super::stream::DisturbanceStream;
use crate::controller::{Empc, EmpcConfig, SolverTolerances};
use crate::error::{Result, ZempcError};
use crate::interval::IntervalBox;
use crate::sampling::UniformSampler;
use crate::steadystate::{solve_steady_state, SteadyState, SteadyStateOptions};
use crate::sysmodel::{
    cstr_economic_cost, cstr_target_zone, one_step_deviation_bound, ConstraintSpec, CstrParams, EconomicCost,
    LipschitzEstimate, PlantModel,
};
use crate::zonegen::{compute_economic_zone, EconomicZone, ZoneOptions};

/// Plant, constraints and controller settings shared by every run of an experiment.
#[derive(Clone)]
pub struct Experiment {
    pub model: PlantModel,
    pub spec: ConstraintSpec,
    pub target_zone: IntervalBox,
    pub economic: EconomicCost,
    pub zone_options: ZoneOptions,
    pub steady_options: SteadyStateOptions,
    pub horizon: usize,
    pub c1: f64,
    pub c2: f64,
    pub tolerances: SolverTolerances,
    pub soft_terminal_weight: f64,
    pub x0: Vec<f64>,
    pub steps: usize,
    pub disturbance: bool,
}

impl Experiment {
    /// CSTR with `N = 20`, `c1 = 0`, `c2 = 10`, `T = 1000`, disturbances on.
    ///
    /// `x0 = [0.65, 349]` lies in the target zone but outside the economic zone, and
    /// the terminal equality can be met from it in 20 steps.
    pub fn cstr_default() -> Self {
        Self {
            model: PlantModel::cstr(CstrParams::default(), 0.1).expect("default CSTR"),
            spec: ConstraintSpec::cstr_default(),
            target_zone: cstr_target_zone(),
            economic: cstr_economic_cost(),
            zone_options: ZoneOptions::cstr_default(),
            steady_options: SteadyStateOptions::default(),
            horizon: 20,
            c1: 0.0,
            c2: 10.0,
            tolerances: SolverTolerances::default(),
            soft_terminal_weight: 1e4,
            x0: vec![0.65, 349.0],
            steps: 1000,
            disturbance: true,
        }
    }

    pub fn economic_zone(&self, delta: f64) -> Result<EconomicZone> {
        compute_economic_zone(&self.model, &self.spec, &self.target_zone, delta, self.economic.clone(), &self.zone_options)
    }

    pub fn steady_state(&self, zone: &IntervalBox) -> Result<SteadyState> {
        solve_steady_state(&self.model, zone, &self.spec.input_box, &self.economic, &self.steady_options)
    }

    /// Tracks the zone built at `track_delta` and anchors the terminal state at the
    /// steady state of the zone built at `terminal_delta`.
    pub fn proposed(&self, track_delta: f64, terminal_delta: f64) -> Result<ControllerPlan> {
        let track = self.economic_zone(track_delta)?;
        let terminal = if terminal_delta == track_delta { track.clone() } else { self.economic_zone(terminal_delta)? };
        let ss = self.steady_state(&terminal.inner_box)?;
        Ok(ControllerPlan::proposed(&track, ss))
    }

    /// Tracks `X_t` directly with the terminal state at its own economic optimum.
    pub fn conventional(&self) -> Result<ControllerPlan> {
        let ss = self.steady_state(&self.target_zone)?;
        Ok(ControllerPlan::conventional(self.target_zone.clone(), ss))
    }

    pub fn controller(&self, plan: &ControllerPlan) -> Result<Empc> {
        let mut cfg = EmpcConfig::new(
            self.horizon,
            self.c1,
            self.c2,
            plan.tracked_zone.clone(),
            plan.terminal.clone(),
            self.spec.state_box.clone(),
            self.spec.input_box.clone(),
            self.economic.clone(),
        )?;
        cfg.tolerances = self.tolerances;
        cfg.soft_terminal_weight = self.soft_terminal_weight;
        Empc::new(self.model.clone(), cfg)
    }

    pub fn stream(&self, seed: u64) -> DisturbanceStream {
        if self.disturbance {
            DisturbanceStream::new(seed, self.spec.disturbance_box.clone())
        } else {
            DisturbanceStream::off(self.model.n_w)
        }
    }

    pub fn scoring(&self, plan: &ControllerPlan) -> Scoring {
        Scoring {
            economic: self.economic.clone(),
            target_zone: self.target_zone.clone(),
            c1: self.c1,
            c2: self.c2,
            region: plan.region.clone(),
        }
    }

    /// One closed-loop run of `plan` on the stream of `seed`.
    pub fn run(&self, plan: &ControllerPlan, seed: u64) -> Result<ClosedLoopRecord> {
        let mut controller = self.controller(plan)?;
        run_closed_loop(&self.model, &mut controller, &self.x0, self.steps, &mut self.stream(seed), &self.scoring(plan))
    }

    /// Runs every seed in parallel; records come back in seed order.
    pub fn run_seeds(&self, plan: &ControllerPlan, seeds: &[u64]) -> Result<Vec<ClosedLoopRecord>> {
        seeds.par_iter().map(|s| self.run(plan, *s)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Proposed,
    Conventional,
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Proposed => "proposed",
            ControllerKind::Conventional => "conventional",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "proposed" => Some(ControllerKind::Proposed),
            "conventional" => Some(ControllerKind::Conventional),
            _ => None,
        }
    }
}

/// The zone a controller tracks, its terminal steady state and the monitored `X_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerPlan {
    pub kind: ControllerKind,
    pub tracked_zone: IntervalBox,
    pub terminal: SteadyState,
    pub region: Option<ZoneRegion>,
}

impl ControllerPlan {
    pub fn proposed(track: &EconomicZone, terminal: SteadyState) -> Self {
        Self {
            kind: ControllerKind::Proposed,
            tracked_zone: track.inner_box.clone(),
            terminal,
            region: Some(ZoneRegion::from_zone(track)),
        }
    }

    pub fn conventional(target_zone: IntervalBox, terminal: SteadyState) -> Self {
        Self { kind: ControllerKind::Conventional, tracked_zone: target_zone, terminal, region: None }
    }
}

/// Per-run aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub l_avg: f64,
    pub steps: usize,
    pub first_entry: Option<usize>,
    pub post_entry_violations: usize,
    /// Steps with the state outside `X_t`.
    pub target_exits: usize,
    pub flagged_steps: usize,
    pub error: Option<String>,
}

impl RunSummary {
    pub fn of(rec: &ClosedLoopRecord) -> Self {
        Self {
            seed: rec.seed,
            l_avg: rec.l_avg,
            steps: rec.steps(),
            first_entry: rec.first_entry,
            post_entry_violations: rec.post_entry_violations,
            target_exits: rec.in_xt.iter().filter(|b| !**b).count(),
            flagged_steps: rec.flagged_steps(),
            error: rec.error.as_ref().map(|e| e.to_string()),
        }
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (mut total, mut count) = (0.0, 0usize);
    for x in v {
        total += x;
        count += 1;
    }
    if count == 0 {
        f64::NAN
    } else {
        total / count as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub l_e_star: Option<f64>,
    /// Mean `l_avg` over the seeds.
    pub l_avg: Option<f64>,
    pub kernel_cells: usize,
    pub runs: Vec<RunSummary>,
    /// Why the row has no values.
    pub failure: Option<String>,
}

/// For each `delta`: zone, steady state on its inner box, and closed-loop runs of a
/// controller tracking that box with its terminal at that steady state.
///
/// A `delta` whose zone or steady state cannot be built yields a row with `failure`
/// set; the sweep continues.
pub fn risk_sweep(exp: &Experiment, deltas: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if deltas.is_empty() || seeds.is_empty() {
        return Err(ZempcError::Config("risk sweep needs at least one delta and one seed".into()));
    }
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let failed = |kernel_cells: usize, e: ZempcError| {
            warn!("delta {delta}: {e}");
            SweepRow { delta, l_e_star: None, l_avg: None, kernel_cells, runs: Vec::new(), failure: Some(e.to_string()) }
        };
        let zone = match exp.economic_zone(delta) {
            Ok(z) => z,
            Err(e @ (ZempcError::ZoneConstruction(_) | ZempcError::Infeasible(_))) => {
                rows.push(failed(0, e));
                continue;
            }
            Err(e) => return Err(e),
        };
        let cells = zone.kept.count();
        let ss = match exp.steady_state(&zone.inner_box) {
            Ok(s) => s,
            Err(e @ ZempcError::Infeasible(_)) => {
                rows.push(failed(cells, e));
                continue;
            }
            Err(e) => return Err(e),
        };
        let plan = ControllerPlan::proposed(&zone, ss.clone());
        let records = exp.run_seeds(&plan, seeds)?;
        let runs: Vec<RunSummary> = records.iter().map(RunSummary::of).collect();
        let l_avg = mean(runs.iter().map(|r| r.l_avg));
        info!("delta {delta}: l_e* {:.6}, mean l_avg {l_avg:.6}", ss.cost);
        rows.push(SweepRow { delta, l_e_star: Some(ss.cost), l_avg: Some(l_avg), kernel_cells: cells, runs, failure: None });
    }
    Ok(rows)
}

/// Sweep CSV: `delta,l_e_star,l_avg,kernel_cells,status`; failed rows carry `FAILED`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("delta,l_e_star,l_avg,kernel_cells,status\n");
    for r in rows {
        let _ = write!(out, "{:.16e}", r.delta);
        match (r.l_e_star, r.l_avg) {
            (Some(a), Some(b)) => {
                let _ = write!(out, ",{a:.16e},{b:.16e},{},ok", r.kernel_cells);
            }
            _ => {
                let _ = write!(out, ",FAILED,FAILED,{},FAILED", r.kernel_cells);
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub seed: u64,
    pub proposed: RunSummary,
    pub conventional: RunSummary,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub proposed_records: Vec<ClosedLoopRecord>,
    pub conventional_records: Vec<ClosedLoopRecord>,
}

impl Comparison {
    pub fn mean_proposed(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.proposed.l_avg))
    }

    pub fn mean_conventional(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.conventional.l_avg))
    }

    /// Seeds where the proposed controller scored strictly lower.
    pub fn proposed_wins(&self) -> usize {
        self.rows.iter().filter(|r| r.proposed.l_avg < r.conventional.l_avg).count()
    }

    /// `seed,l_avg_a,l_avg_b,exits_a,exits_b,first_entry_a,post_entry_violations_a` plus a mean row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "seed,l_avg_proposed,l_avg_conventional,target_exits_proposed,target_exits_conventional,first_entry_proposed,post_entry_violations_proposed\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{},{},{},{}",
                r.seed,
                r.proposed.l_avg,
                r.conventional.l_avg,
                r.proposed.target_exits,
                r.conventional.target_exits,
                r.proposed.first_entry.map_or("none".to_string(), |n| n.to_string()),
                r.proposed.post_entry_violations
            );
        }
        let _ = writeln!(out, "mean,{:.16e},{:.16e},,,,", self.mean_proposed(), self.mean_conventional());
        out
    }
}

/// Runs both plans on the same disturbance realization per seed.
pub fn compare_controllers(
    exp: &Experiment,
    proposed: &ControllerPlan,
    conventional: &ControllerPlan,
    seeds: &[u64],
) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(ZempcError::Config("comparison needs at least one seed".into()));
    }
    let proposed_records = exp.run_seeds(proposed, seeds)?;
    let conventional_records = exp.run_seeds(conventional, seeds)?;
    let rows = seeds
        .iter()
        .zip(proposed_records.iter().zip(&conventional_records))
        .map(|(s, (a, b))| ComparisonRow { seed: *s, proposed: RunSummary::of(a), conventional: RunSummary::of(b) })
        .collect();
    Ok(Comparison { rows, proposed_records, conventional_records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub samples: usize,
    pub bound: f64,
    pub max_deviation: f64,
    /// Largest `deviation / bound`; at most 1 when the bound holds.
    pub worst_ratio: f64,
    pub violations: usize,
}

impl DeviationReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Checks `|f(x,u,w) - f(x,u,0)| <= sqrt(n_x) L_w theta` on random `(x, u, w)`.
///
/// Every other disturbance is a vertex of `W`, where the deviation peaks. A sample
/// counts as a violation only beyond a relative rounding allowance of 1e-12, so
/// systems that meet the bound with equality pass.
pub fn validate_deviation_bound(
    model: &PlantModel,
    spec: &ConstraintSpec,
    est: &LipschitzEstimate,
    n_samples: usize,
    seed: u64,
) -> Result<DeviationReport> {
    let bound = one_step_deviation_bound(est, spec.theta(None), model.n_x);
    let mut rng = UniformSampler::new(seed);
    let vertices = spec.disturbance_box.vertices();
    let zero = vec![0.0; model.n_w];
    let (mut max_deviation, mut violations) = (0.0_f64, 0usize);
    for k in 0..n_samples {
        let x = rng.in_box(&spec.state_box);
        let u = rng.in_box(&spec.input_box);
        let w = if k % 2 == 0 { rng.in_box(&spec.disturbance_box) } else { vertices[rng.index(vertices.len())].clone() };
        let a = model.step(&x, &u, &w)?;
        let b = model.step(&x, &u, &zero)?;
        let d = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        max_deviation = max_deviation.max(d);
        if d > bound * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    let worst_ratio = if bound > 0.0 {
        max_deviation / bound
    } else if max_deviation == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(DeviationReport { samples: n_samples, bound, max_deviation, worst_ratio, violations })
}
