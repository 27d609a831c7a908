use std::fmt::Write as _;

use log::{info, warn};

use super::stream::DisturbanceStream;
use crate::controller::{zone_penalty, Empc, SolveStatus, StepDiagnostics};
use crate::error::{Result, ZempcError};
use crate::interval::IntervalBox;
use crate::sysmodel::{EconomicCost, PlantModel};
use crate::zonegen::covering::{CellMask, FiniteCovering};
use crate::zonegen::{EconomicZone, ZoneArtifact};

/// Union of the kernel cells of an economic zone, used as `X_e` by the monitors.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneRegion {
    pub covering: FiniteCovering,
    pub kept: CellMask,
    pub inner_box: IntervalBox,
}

impl ZoneRegion {
    pub fn from_zone(zone: &EconomicZone) -> Self {
        Self { covering: zone.covering.clone(), kept: zone.kept.clone(), inner_box: zone.inner_box.clone() }
    }

    pub fn from_artifact(a: &ZoneArtifact) -> Self {
        Self { covering: a.covering.clone(), kept: a.kept.clone(), inner_box: a.inner_box.clone() }
    }

    /// Closed-cell membership: a point on a face shared with a kept cell counts.
    pub fn contains(&self, x: &[f64]) -> bool {
        let cov = &self.covering;
        if self.inner_box.contains(x) {
            return true;
        }
        let Some(cell) = cov.locate(x) else { return false };
        if self.kept.contains(cell) {
            return true;
        }
        // `locate` is half-open; try the neighbours whose upper face `x` sits on.
        let multi = cov.multi_index(cell);
        (0..cov.dim()).any(|i| {
            multi[i] > 0 && x[i] == cov.edge(i, multi[i]) && {
                let mut m = multi.clone();
                m[i] -= 1;
                self.kept.contains(cov.index(&m))
            }
        })
    }
}

/// How a closed-loop run is scored and monitored.
#[derive(Clone)]
pub struct Scoring {
    pub economic: EconomicCost,
    /// Target zone `X_t`: the zone term of the overall objective and of the exit count.
    pub target_zone: IntervalBox,
    pub c1: f64,
    pub c2: f64,
    /// Economic zone `X_e` for the entry monitor; `None` disables it.
    pub region: Option<ZoneRegion>,
}

impl Scoring {
    /// `l_e(x, u)` and the target-zone penalty.
    pub fn stage(&self, x: &[f64], u: &[f64]) -> (f64, f64) {
        ((self.economic)(x, u), zone_penalty(x, &self.target_zone, self.c1, self.c2))
    }
}

/// Everything observed along one closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRecord {
    pub seed: u64,
    pub steps_requested: usize,
    /// `x(n)` for every recorded step, then the state after the last one.
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub l_e: Vec<f64>,
    pub l_z: Vec<f64>,
    pub in_xe: Vec<bool>,
    pub in_xt: Vec<bool>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Mean of `l_e + l_z` over the recorded steps.
    pub l_avg: f64,
    /// First step with `x(n)` in `X_e`.
    pub first_entry: Option<usize>,
    /// Steps after `first_entry` with `x(n)` outside `X_t`.
    pub post_entry_violations: usize,
    /// Set when the controller gave up before `steps_requested`.
    pub error: Option<ZempcError>,
}

impl ClosedLoopRecord {
    pub fn steps(&self) -> usize {
        self.u.len()
    }

    pub fn completed(&self) -> bool {
        self.error.is_none() && self.steps() == self.steps_requested
    }

    /// Steps whose solve was not an accepted hard-terminal optimum.
    pub fn flagged_steps(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.flagged()).count()
    }

    pub fn solver_failures(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.status != SolveStatus::Optimal).count()
    }

    /// Summation in step order, the same order `run_closed_loop` uses.
    pub fn recompute_l_avg(&self) -> f64 {
        average(&self.l_e, &self.l_z)
    }
}

fn average(l_e: &[f64], l_z: &[f64]) -> f64 {
    if l_e.is_empty() {
        return f64::NAN;
    }
    let mut total = 0.0;
    for (a, b) in l_e.iter().zip(l_z) {
        total += a + b;
    }
    total / l_e.len() as f64
}

/// Runs `steps` iterations of `u(n) = control_step(x(n))`, `x(n+1) = f(x(n), u(n), w(n))`.
///
/// A controller or model error stops the run; the partial record is returned with
/// `error` set and aggregates over the steps that were completed.
pub fn run_closed_loop(
    model: &PlantModel,
    controller: &mut Empc,
    x0: &[f64],
    steps: usize,
    stream: &mut DisturbanceStream,
    scoring: &Scoring,
) -> Result<ClosedLoopRecord> {
    if steps == 0 {
        return Err(ZempcError::Config("closed-loop run needs at least one step".into()));
    }
    if x0.len() != model.n_x || stream.bounds().dim() != model.n_w {
        return Err(ZempcError::Config("initial state or disturbance dimension does not match the model".into()));
    }
    let mut rec = ClosedLoopRecord {
        seed: stream.seed(),
        steps_requested: steps,
        x: vec![x0.to_vec()],
        u: Vec::with_capacity(steps),
        w: Vec::with_capacity(steps),
        l_e: Vec::with_capacity(steps),
        l_z: Vec::with_capacity(steps),
        in_xe: Vec::with_capacity(steps),
        in_xt: Vec::with_capacity(steps),
        diagnostics: Vec::with_capacity(steps),
        l_avg: f64::NAN,
        first_entry: None,
        post_entry_violations: 0,
        error: None,
    };
    let mut x = x0.to_vec();
    for n in 0..steps {
        let (u, diag) = match controller.control_step(&x) {
            Ok(r) => r,
            Err(e) => {
                warn!("seed {}: stopped at step {n}: {e}", rec.seed);
                rec.error = Some(e);
                break;
            }
        };
        let w = stream.next_sample();
        let next = match model.step(&x, &u, &w) {
            Ok(v) => v,
            Err(e) => {
                rec.error = Some(e);
                break;
            }
        };
        let (l_e, l_z) = scoring.stage(&x, &u);
        rec.l_e.push(l_e);
        rec.l_z.push(l_z);
        rec.in_xt.push(scoring.target_zone.contains(&x));
        rec.in_xe.push(scoring.region.as_ref().is_some_and(|r| r.contains(&x)));
        rec.u.push(u);
        rec.w.push(w);
        rec.diagnostics.push(diag);
        rec.x.push(next.clone());
        x = next;
    }
    rec.l_avg = average(&rec.l_e, &rec.l_z);
    let entry = entry_and_exits(&rec.in_xe, &rec.in_xt);
    rec.first_entry = entry.0;
    rec.post_entry_violations = entry.1.len();
    info!(
        "seed {}: {} steps, l_avg {:.6}, first entry {:?}, {} post-entry exits, {} flagged solves",
        rec.seed,
        rec.steps(),
        rec.l_avg,
        rec.first_entry,
        rec.post_entry_violations,
        rec.flagged_steps()
    );
    Ok(rec)
}

fn entry_and_exits(in_xe: &[bool], in_xt: &[bool]) -> (Option<usize>, Vec<usize>) {
    let first = in_xe.iter().position(|b| *b);
    let exits = match first {
        Some(n0) => (n0 + 1..in_xt.len()).filter(|n| !in_xt[*n]).collect(),
        None => Vec::new(),
    };
    (first, exits)
}

/// Result of the entry/exit monitor on one record.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorReport {
    pub seed: u64,
    pub first_entry: Option<usize>,
    /// Steps after the first entry with the state outside `X_t`.
    pub violations: Vec<usize>,
}

impl MonitorReport {
    /// Entered `X_e` and never left `X_t` afterwards.
    pub fn holds(&self) -> bool {
        self.first_entry.is_some() && self.violations.is_empty()
    }
}

/// Recomputes entry into `region` and later exits from `target_zone` from the stored states.
pub fn monitor_zone_behavior(record: &ClosedLoopRecord, region: &ZoneRegion, target_zone: &IntervalBox) -> MonitorReport {
    // Every visited state, including the one after the last step.
    let in_xe: Vec<bool> = record.x.iter().map(|x| region.contains(x)).collect();
    let in_xt: Vec<bool> = record.x.iter().map(|x| target_zone.contains(x)).collect();
    let (first_entry, violations) = entry_and_exits(&in_xe, &in_xt);
    MonitorReport { seed: record.seed, first_entry, violations }
}

fn fmt_f(out: &mut String, v: f64) {
    let _ = write!(out, ",{v:.16e}");
}

/// Trajectory CSV: step, states, inputs, disturbances, `l_e`, `l_z`, `in_Xe`, `in_Xt`, solver status.
pub fn trajectory_csv(record: &ClosedLoopRecord, model: &PlantModel) -> String {
    let mut out = String::from("step");
    for name in model.state_names.iter().chain(&model.input_names).chain(&model.disturbance_names) {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",l_e,l_z,in_Xe,in_Xt,solver_status\n");
    for n in 0..record.steps() {
        let _ = write!(out, "{n}");
        for v in record.x[n].iter().chain(&record.u[n]).chain(&record.w[n]) {
            fmt_f(&mut out, *v);
        }
        fmt_f(&mut out, record.l_e[n]);
        fmt_f(&mut out, record.l_z[n]);
        let _ = writeln!(
            out,
            ",{},{},{}",
            u8::from(record.in_xe[n]),
            u8::from(record.in_xt[n]),
            record.diagnostics[n].status.name()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_and_exit_counting() {
        let xe = [false, false, true, true, false, false];
        let xt = [false, true, true, false, true, false];
        let (first, exits) = entry_and_exits(&xe, &xt);
        assert_eq!(first, Some(2));
        assert_eq!(exits, vec![3, 5]);
        assert_eq!(entry_and_exits(&[false; 3], &[false; 3]), (None, vec![]));
    }

    #[test]
    fn average_is_plain_mean() {
        assert_eq!(average(&[1.0, 2.0], &[0.5, 0.5]), 2.0);
        assert!(average(&[], &[]).is_nan());
    }
}
