use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde_json::json;
use zempc::controller::diagnostics_csv;
use zempc::simlab::{
    compare_controllers, monitor_zone_behavior, penalty_oracle, risk_sweep, scalar_kernel_oracle, sweep_csv,
    trajectory_csv, validate_deviation_bound, ClosedLoopRecord, ControllerKind, ControllerPlan, Experiment,
    RunSummary, ZoneRegion,
};
use zempc::steadystate::SteadyState;
use zempc::sysmodel::estimate_lipschitz;
use zempc::zonegen::{cells_csv, verify_zone, EconomicZone, ZoneArtifact};
use zempc::IntervalBox;

use crate::config::{InitialState, RunConfig};
use crate::error::CliError;

fn tag(delta: f64) -> String {
    format!("{delta}")
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn read_artifact(path: &Path, target: &IntervalBox) -> Result<ZoneArtifact, CliError> {
    let a = ZoneArtifact::read(path)?;
    if a.covering.base_box() != target {
        return Err(CliError::config(format!(
            "artifact {} covers {} but zone.target is {target}",
            path.display(),
            a.covering.base_box()
        )));
    }
    Ok(a)
}

/// The tracked zone, the terminal steady state and the zone built for tracking when
/// it was computed rather than loaded.
pub struct ProposedSetup {
    pub plan: ControllerPlan,
    pub zone: Option<EconomicZone>,
}

pub fn proposed_setup(cfg: &RunConfig) -> Result<ProposedSetup, CliError> {
    let exp = &cfg.experiment;
    let (tracked_zone, region, zone) = match &cfg.tracking_artifact {
        Some(path) => {
            let a = read_artifact(path, &exp.target_zone)?;
            info!("tracking zone loaded from {}", path.display());
            (a.inner_box.clone(), ZoneRegion::from_artifact(&a), None)
        }
        None => {
            let z = exp.economic_zone(cfg.tracking_delta)?;
            (z.inner_box.clone(), ZoneRegion::from_zone(&z), Some(z))
        }
    };
    let terminal: SteadyState = match &cfg.terminal_artifact {
        Some(path) => {
            let a = read_artifact(path, &exp.target_zone)?;
            match a.steady_state {
                Some(ss) => ss,
                None => exp.steady_state(&a.inner_box)?,
            }
        }
        None => {
            let inner = match &zone {
                Some(z) if cfg.terminal_delta == cfg.tracking_delta => z.inner_box.clone(),
                _ => exp.economic_zone(cfg.terminal_delta)?.inner_box,
            };
            exp.steady_state(&inner)?
        }
    };
    let plan = ControllerPlan { kind: ControllerKind::Proposed, tracked_zone, terminal, region: Some(region) };
    Ok(ProposedSetup { plan, zone })
}

fn plan_for(cfg: &RunConfig, kind: ControllerKind) -> Result<ControllerPlan, CliError> {
    Ok(match kind {
        ControllerKind::Proposed => proposed_setup(cfg)?.plan,
        ControllerKind::Conventional => cfg.experiment.conventional()?,
    })
}

fn experiment_for(cfg: &RunConfig, plan: &ControllerPlan) -> Experiment {
    let mut exp = cfg.experiment.clone();
    if cfg.x0 == InitialState::Steady {
        exp.x0 = plan.terminal.x_s.clone();
    }
    exp
}

fn record_error(records: &[&ClosedLoopRecord]) -> Result<(), CliError> {
    match records.iter().find_map(|r| r.error.clone()) {
        Some(e) => Err(CliError::Core(e)),
        None => Ok(()),
    }
}

fn summary_line(name: &str, s: &RunSummary) -> String {
    format!(
        "{name} seed {}: l_avg {:.6}, steps {}, first entry {}, post-entry violations {}, target-zone exits {}, flagged solves {}",
        s.seed,
        s.l_avg,
        s.steps,
        s.first_entry.map_or("none".to_string(), |n| n.to_string()),
        s.post_entry_violations,
        s.target_exits,
        s.flagged_steps
    )
}

pub fn compute_zone(cfg: &RunConfig) -> Result<(), CliError> {
    let t = Instant::now();
    let exp = &cfg.experiment;
    let zone = exp.economic_zone(cfg.zone_delta)?;
    let ss = exp.steady_state(&zone.inner_box)?;
    let artifact = ZoneArtifact::from_zone(&zone, &exp.spec.input_box, Some(ss.clone()));
    let name = format!("zone_delta{}", tag(cfg.zone_delta));
    let path = write_file(&cfg.output_dir, &format!("{name}.txt"), &artifact.to_text())?;
    write_file(&cfg.output_dir, &format!("{name}_cells.csv"), &cells_csv(&zone, &exp.model.state_names))?;
    println!(
        "delta {}: {} kernel cells of {} ({} passed the economic criterion)",
        tag(cfg.zone_delta),
        zone.kept.count(),
        zone.covering.n_cells(),
        zone.candidates.count()
    );
    println!("inner box {}", zone.inner_box);
    println!("steady state {ss}");
    println!("artifact {}", path.display());
    println!("elapsed {:.2} s", t.elapsed().as_secs_f64());
    Ok(())
}

pub fn steady_state(cfg: &RunConfig) -> Result<(), CliError> {
    let exp = &cfg.experiment;
    let mut rows: Vec<(String, String, SteadyState)> = Vec::new();
    rows.push(("target".into(), String::new(), exp.steady_state(&exp.target_zone)?));
    let mut deltas = vec![cfg.tracking_delta];
    if cfg.terminal_delta != cfg.tracking_delta {
        deltas.push(cfg.terminal_delta);
    }
    for d in deltas {
        let zone = exp.economic_zone(d)?;
        rows.push(("economic".into(), tag(d), exp.steady_state(&zone.inner_box)?));
    }
    let mut csv = String::from("zone,delta");
    for name in exp.model.state_names.iter().chain(&exp.model.input_names) {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push_str(",cost,residual\n");
    for (zone, delta, ss) in &rows {
        let _ = write!(csv, "{zone},{delta}");
        for v in ss.x_s.iter().chain(&ss.u_s) {
            let _ = write!(csv, ",{v:.16e}");
        }
        let _ = writeln!(csv, ",{:.16e},{:.16e}", ss.cost, ss.residual);
        let label = if delta.is_empty() { zone.clone() } else { format!("{zone} delta {delta}") };
        println!("{label}: {ss}");
    }
    write_file(&cfg.output_dir, "steady_states.csv", &csv)?;
    Ok(())
}

pub fn simulate(cfg: &RunConfig, kind: ControllerKind, seed: u64) -> Result<(), CliError> {
    let plan = plan_for(cfg, kind)?;
    let exp = experiment_for(cfg, &plan);
    let rec = exp.run(&plan, seed)?;
    let name = format!("{}_seed{seed}", kind.name());
    write_file(&cfg.output_dir, &format!("trajectory_{name}.csv"), &trajectory_csv(&rec, &exp.model))?;
    write_file(
        &cfg.output_dir,
        &format!("diagnostics_{name}.csv"),
        &diagnostics_csv(&rec.diagnostics, &exp.model.input_names),
    )?;
    println!("{}", summary_line(kind.name(), &RunSummary::of(&rec)));
    println!("terminal steady-state cost {:.6}", plan.terminal.cost);
    record_error(&[&rec])
}

pub fn sweep(cfg: &RunConfig, deltas: &[f64], seeds: &[u64]) -> Result<(), CliError> {
    let rows = risk_sweep(&cfg.experiment, deltas, seeds)?;
    write_file(&cfg.output_dir, "sweep.csv", &sweep_csv(&rows))?;
    for r in &rows {
        match (&r.failure, r.l_e_star, r.l_avg) {
            (None, Some(a), Some(b)) => {
                println!("delta {}: l_e* {a:.6}, l_avg {b:.6}, {} kernel cells", tag(r.delta), r.kernel_cells)
            }
            (f, _, _) => println!("delta {}: FAILED ({})", tag(r.delta), f.as_deref().unwrap_or("no value")),
        }
        for run in r.runs.iter().filter(|s| s.error.is_some()) {
            warn!("delta {}: seed {} stopped early: {}", tag(r.delta), run.seed, run.error.as_deref().unwrap_or(""));
        }
    }
    match rows.iter().flat_map(|r| &r.runs).find_map(|s| s.error.clone()) {
        Some(e) => Err(CliError::Core(zempc::ZempcError::Solver(e))),
        None => Ok(()),
    }
}

pub fn compare(cfg: &RunConfig, seeds: &[u64]) -> Result<(), CliError> {
    let proposed = proposed_setup(cfg)?.plan;
    let conventional = cfg.experiment.conventional()?;
    let exp = &cfg.experiment;
    let cmp = compare_controllers(exp, &proposed, &conventional, seeds)?;
    write_file(&cfg.output_dir, "comparison.csv", &cmp.to_csv())?;
    for (kind, records) in [("proposed", &cmp.proposed_records), ("conventional", &cmp.conventional_records)] {
        for rec in records {
            write_file(
                &cfg.output_dir,
                &format!("trajectory_{kind}_seed{}.csv", rec.seed),
                &trajectory_csv(rec, &exp.model),
            )?;
        }
    }
    for row in &cmp.rows {
        println!("{}", summary_line("proposed", &row.proposed));
        println!("{}", summary_line("conventional", &row.conventional));
    }
    println!(
        "mean l_avg: proposed {:.6}, conventional {:.6}; proposed lower on {} of {} seeds",
        cmp.mean_proposed(),
        cmp.mean_conventional(),
        cmp.proposed_wins(),
        cmp.rows.len()
    );
    let all: Vec<&ClosedLoopRecord> = cmp.proposed_records.iter().chain(&cmp.conventional_records).collect();
    record_error(&all)
}

struct Check {
    name: &'static str,
    passed: bool,
    detail: serde_json::Value,
}

pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let exp = &cfg.experiment;
    let v = &cfg.validation;
    let mut checks = Vec::new();

    let est = estimate_lipschitz(&exp.model, &exp.spec, v.samples, v.seed, v.lipschitz_margin)?;
    let dev = validate_deviation_bound(&exp.model, &exp.spec, &est, v.samples, v.seed.wrapping_add(1))?;
    checks.push(Check {
        name: "deviation_bound",
        passed: dev.passed(),
        detail: json!({
            "samples": dev.samples, "l_w": est.l_w, "bound": dev.bound,
            "max_deviation": dev.max_deviation, "worst_ratio": dev.worst_ratio, "violations": dev.violations,
        }),
    });

    for gain in [0.5, 1.5] {
        let k = scalar_kernel_oracle(gain, 100, 31)?;
        checks.push(Check {
            name: if gain < 1.0 { "kernel_oracle_contractive" } else { "kernel_oracle_unstable" },
            passed: k.passed(),
            detail: json!({ "gain": gain, "cells": k.cells, "module_kept": k.module_kept.len(), "brute_kept": k.brute_kept.len() }),
        });
    }

    let p = penalty_oracle(10_000, v.seed)?;
    checks.push(Check {
        name: "penalty_oracle",
        passed: p.passed(),
        detail: json!({ "instances": p.instances, "max_error": p.max_error }),
    });

    let setup = proposed_setup(cfg)?;
    match &setup.zone {
        Some(zone) => {
            let r = verify_zone(zone, &exp.model, &exp.spec, v.verify_samples, v.seed)?;
            checks.push(Check {
                name: "zone_soundness",
                passed: r.passed(),
                detail: json!({
                    "containment_ok": r.containment_ok, "cells_checked": r.cells_checked,
                    "image_violations": r.image_violations.len(), "mc_samples": r.mc_samples,
                    "mc_violations": r.mc_violations.len(),
                }),
            });
        }
        None => info!("zone soundness check skipped: tracking zone loaded from an artifact"),
    }

    let mut run_exp = experiment_for(cfg, &setup.plan);
    run_exp.steps = v.steps;
    let records = run_exp.run_seeds(&setup.plan, &v.seeds)?;
    let region = setup.plan.region.as_ref().expect("proposed plan has a region");
    let mut runs = Vec::new();
    let mut all_hold = true;
    for rec in &records {
        let m = monitor_zone_behavior(rec, region, &exp.target_zone);
        let ok = m.holds() && rec.completed();
        all_hold &= ok;
        runs.push(json!({
            "seed": rec.seed, "steps": rec.steps(), "first_entry": m.first_entry,
            "violations": m.violations.len(), "error": rec.error.as_ref().map(|e| e.to_string()),
        }));
    }
    checks.push(Check { name: "zone_monitor", passed: all_hold, detail: json!({ "runs": runs }) });

    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    let report = json!({
        "passed": failed.is_empty(),
        "checks": checks.iter().map(|c| json!({ "name": c.name, "passed": c.passed, "detail": c.detail })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    let path = write_file(&cfg.output_dir, "validation.json", &text)?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("report {}", path.display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failed.join(", ")))
    }
}
