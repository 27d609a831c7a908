//! TOML run configuration. Every leaf is optional; missing keys take the CSTR
//! defaults and are logged.

use std::fmt::Debug;
use std::path::{Path, PathBuf};

use log::info;
use serde::Deserialize;
use zempc::controller::SolverTolerances;
use zempc::simlab::Experiment;
use zempc::steadystate::SteadyStateOptions;
use zempc::sysmodel::{ConstraintSpec, CstrParams, PlantModel};
use zempc::zonegen::{CriterionKind, DeviationMode, InflationKind, SampleScheme, ZoneOptions};
use zempc::IntervalBox;

use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    lo: Option<Vec<f64>>,
    hi: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    h: Option<f64>,
    params: Option<toml::Table>,
    state_box: Option<RawBox>,
    input_box: Option<RawBox>,
    disturbance_box: Option<RawBox>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawZone {
    target: Option<RawBox>,
    delta: Option<f64>,
    resolution: Option<Vec<i64>>,
    input_points: Option<i64>,
    criterion: Option<String>,
    deviation: Option<String>,
    inflation: Option<String>,
    inflation_margin: Option<f64>,
    sample_grid: Option<i64>,
    lipschitz_samples: Option<i64>,
    lipschitz_margin: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    constraint: Option<f64>,
    kkt: Option<f64>,
    max_iter: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    horizon: Option<i64>,
    c1: Option<f64>,
    c2: Option<f64>,
    tracking_delta: Option<f64>,
    terminal_delta: Option<f64>,
    tracking_artifact: Option<PathBuf>,
    terminal_artifact: Option<PathBuf>,
    soft_terminal_weight: Option<f64>,
    tolerances: Option<RawTolerances>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawX0 {
    Point(Vec<f64>),
    Named(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    steps: Option<i64>,
    seeds: Option<Vec<u64>>,
    x0: Option<RawX0>,
    disturbance: Option<bool>,
    deltas: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValidation {
    samples: Option<i64>,
    seed: Option<u64>,
    lipschitz_margin: Option<f64>,
    seeds: Option<Vec<u64>>,
    steps: Option<i64>,
    verify_samples: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Option<RawModel>,
    zone: Option<RawZone>,
    controller: Option<RawController>,
    simulation: Option<RawSimulation>,
    validation: Option<RawValidation>,
    output: Option<RawOutput>,
}

/// Initial state: a point or the terminal steady state of the simulated controller.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Point(Vec<f64>),
    Steady,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationConfig {
    pub samples: usize,
    pub seed: u64,
    pub lipschitz_margin: f64,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub verify_samples: usize,
}

/// Resolved configuration.
#[derive(Clone)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub zone_delta: f64,
    pub tracking_delta: f64,
    pub terminal_delta: f64,
    pub tracking_artifact: Option<PathBuf>,
    pub terminal_artifact: Option<PathBuf>,
    pub x0: InitialState,
    pub seeds: Vec<u64>,
    pub deltas: Vec<f64>,
    pub validation: ValidationConfig,
    pub output_dir: PathBuf,
}

fn or_default<T: Debug>(v: Option<T>, key: &str, default: T) -> T {
    v.unwrap_or_else(|| {
        info!("config: {key} not set, using {default:?}");
        default
    })
}

fn positive(v: i64, key: &str) -> Result<usize, CliError> {
    if v <= 0 {
        return Err(CliError::config(format!("{key} must be positive, got {v}")));
    }
    Ok(v as usize)
}

fn finite(v: f64, key: &str) -> Result<f64, CliError> {
    if !v.is_finite() {
        return Err(CliError::config(format!("{key} must be finite, got {v}")));
    }
    Ok(v)
}

fn nonnegative(v: f64, key: &str) -> Result<f64, CliError> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(CliError::config(format!("{key} must be finite and nonnegative, got {v}")));
    }
    Ok(v)
}

fn resolve_box(raw: Option<RawBox>, key: &str, default: &IntervalBox) -> Result<IntervalBox, CliError> {
    let raw = raw.unwrap_or_default();
    let lo = or_default(raw.lo, &format!("{key}.lo"), default.lo().to_vec());
    let hi = or_default(raw.hi, &format!("{key}.hi"), default.hi().to_vec());
    if lo.len() != default.dim() || hi.len() != default.dim() {
        return Err(CliError::config(format!(
            "{key}: expected {} entries in lo and hi, got {} and {}",
            default.dim(),
            lo.len(),
            hi.len()
        )));
    }
    for i in 0..lo.len() {
        if !(lo[i].is_finite() && hi[i].is_finite()) {
            return Err(CliError::config(format!("{key}: bounds must be finite")));
        }
        if lo[i] > hi[i] {
            return Err(CliError::config(format!("{key}: lo > hi on axis {i} ({} > {})", lo[i], hi[i])));
        }
    }
    IntervalBox::new(lo, hi).map_err(|e| CliError::config(format!("{key}: {e}")))
}

fn deltas_ok(v: Vec<f64>, key: &str) -> Result<Vec<f64>, CliError> {
    if v.is_empty() {
        return Err(CliError::config(format!("{key} must not be empty")));
    }
    for d in &v {
        finite(*d, key)?;
    }
    Ok(v)
}

fn seeds_ok(v: Vec<u64>, key: &str) -> Result<Vec<u64>, CliError> {
    if v.is_empty() {
        return Err(CliError::config(format!("{key} must not be empty")));
    }
    Ok(v)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::config(e.to_string()))?;
        if table.is_empty() {
            return Err(CliError::config("config file is empty".into()));
        }
        let raw: RawConfig =
            RawConfig::deserialize(toml::Value::Table(table)).map_err(|e| CliError::config(e.to_string()))?;
        Self::resolve(raw)
    }

    fn resolve(raw: RawConfig) -> Result<Self, CliError> {
        let mut exp = Experiment::cstr_default();

        let model = raw.model.unwrap_or_default();
        let h = finite(or_default(model.h, "model.h", 0.1), "model.h")?;
        let mut params = CstrParams::default();
        for (key, value) in model.params.unwrap_or_default() {
            let v = value
                .as_float()
                .or_else(|| value.as_integer().map(|i| i as f64))
                .ok_or_else(|| CliError::config(format!("model.params.{key} must be a number")))?;
            params.set(&key, finite(v, &format!("model.params.{key}"))?).map_err(|e| CliError::config(format!("model.params.{key}: {e}")))?;
        }
        exp.model = PlantModel::cstr(params, h).map_err(|e| CliError::config(format!("model: {e}")))?;
        let defaults = ConstraintSpec::cstr_default();
        let state_box = resolve_box(model.state_box, "model.state_box", &defaults.state_box)?;
        let input_box = resolve_box(model.input_box, "model.input_box", &defaults.input_box)?;
        let disturbance_box = resolve_box(model.disturbance_box, "model.disturbance_box", &defaults.disturbance_box)?;
        exp.spec = ConstraintSpec::new(state_box, input_box, disturbance_box)
            .map_err(|e| CliError::config(format!("model.disturbance_box: {e}")))?;

        let zone = raw.zone.unwrap_or_default();
        exp.target_zone = resolve_box(zone.target, "zone.target", &exp.target_zone)?;
        if !exp.spec.state_box.contains_box(&exp.target_zone) {
            return Err(CliError::config("zone.target must lie inside model.state_box".into()));
        }
        let zone_delta = finite(or_default(zone.delta, "zone.delta", 30.0), "zone.delta")?;
        let mut opts = ZoneOptions::cstr_default();
        let resolution = or_default(zone.resolution, "zone.resolution", vec![50, 50]);
        if resolution.len() != exp.model.n_x {
            return Err(CliError::config(format!("zone.resolution needs {} entries", exp.model.n_x)));
        }
        opts.resolution = resolution.iter().map(|r| positive(*r, "zone.resolution")).collect::<Result<_, _>>()?;
        opts.input_points = positive(or_default(zone.input_points, "zone.input_points", 31), "zone.input_points")?;
        let criterion = or_default(zone.criterion, "zone.criterion", "stage".into());
        opts.criterion = CriterionKind::parse(&criterion)
            .ok_or_else(|| CliError::config(format!("zone.criterion: expected stage or economic, got '{criterion}'")))?;
        let deviation = or_default(zone.deviation, "zone.deviation", "rate".into());
        opts.deviation = DeviationMode::parse(&deviation)
            .ok_or_else(|| CliError::config(format!("zone.deviation: expected rate or step, got '{deviation}'")))?;
        let inflation = or_default(zone.inflation, "zone.inflation", "local".into());
        let margin = or_default(zone.inflation_margin, "zone.inflation_margin", 1.1);
        if !(margin >= 1.0 && margin.is_finite()) {
            return Err(CliError::config(format!("zone.inflation_margin must be >= 1, got {margin}")));
        }
        opts.inflation = match inflation.as_str() {
            "local" => InflationKind::Local { margin },
            "isotropic" => InflationKind::Isotropic,
            other => return Err(CliError::config(format!("zone.inflation: expected local or isotropic, got '{other}'"))),
        };
        opts.sample_scheme = match zone.sample_grid {
            None => SampleScheme::CornersAndCenter,
            Some(k) => SampleScheme::Grid(positive(k, "zone.sample_grid")?),
        };
        opts.lipschitz_samples =
            positive(or_default(zone.lipschitz_samples, "zone.lipschitz_samples", 10_000), "zone.lipschitz_samples")?;
        opts.lipschitz_margin = or_default(zone.lipschitz_margin, "zone.lipschitz_margin", 1.2);
        if !(opts.lipschitz_margin >= 1.0 && opts.lipschitz_margin.is_finite()) {
            return Err(CliError::config("zone.lipschitz_margin must be >= 1".into()));
        }
        opts.seed = or_default(zone.seed, "zone.seed", 0);

        let ctrl = raw.controller.unwrap_or_default();
        exp.horizon = positive(or_default(ctrl.horizon, "controller.horizon", 20), "controller.horizon")?;
        exp.c1 = nonnegative(or_default(ctrl.c1, "controller.c1", 0.0), "controller.c1")?;
        exp.c2 = nonnegative(or_default(ctrl.c2, "controller.c2", 10.0), "controller.c2")?;
        if exp.c1 + exp.c2 == 0.0 {
            return Err(CliError::config("controller.c1 and controller.c2 must not both be zero".into()));
        }
        // The zone criterion prices target-zone violations like the controller does.
        opts.c1 = exp.c1;
        opts.c2 = exp.c2;
        exp.zone_options = opts;
        let tracking_delta = finite(
            or_default(ctrl.tracking_delta, "controller.tracking_delta", zone_delta),
            "controller.tracking_delta",
        )?;
        let terminal_delta =
            finite(or_default(ctrl.terminal_delta, "controller.terminal_delta", 10.0), "controller.terminal_delta")?;
        exp.soft_terminal_weight = nonnegative(
            or_default(ctrl.soft_terminal_weight, "controller.soft_terminal_weight", 1e4),
            "controller.soft_terminal_weight",
        )?;
        let tol = ctrl.tolerances.unwrap_or_default();
        let d = SolverTolerances::default();
        exp.tolerances = SolverTolerances {
            constraint: nonnegative(
                or_default(tol.constraint, "controller.tolerances.constraint", d.constraint),
                "controller.tolerances.constraint",
            )?,
            kkt: nonnegative(or_default(tol.kkt, "controller.tolerances.kkt", d.kkt), "controller.tolerances.kkt")?,
            max_iter: positive(
                or_default(tol.max_iter, "controller.tolerances.max_iter", d.max_iter as i64),
                "controller.tolerances.max_iter",
            )?,
        };
        exp.steady_options = SteadyStateOptions::default();

        let sim = raw.simulation.unwrap_or_default();
        exp.steps = positive(or_default(sim.steps, "simulation.steps", 1000), "simulation.steps")?;
        exp.disturbance = or_default(sim.disturbance, "simulation.disturbance", true);
        let seeds = seeds_ok(or_default(sim.seeds, "simulation.seeds", (1..=20).collect()), "simulation.seeds")?;
        let deltas = deltas_ok(
            or_default(sim.deltas, "simulation.deltas", vec![10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0]),
            "simulation.deltas",
        )?;
        let x0 = match or_default(sim.x0, "simulation.x0", RawX0::Point(exp.x0.clone())) {
            RawX0::Named(s) if s == "steady" => InitialState::Steady,
            RawX0::Named(s) => {
                return Err(CliError::config(format!("simulation.x0: expected a state or \"steady\", got '{s}'")))
            }
            RawX0::Point(p) => {
                if p.len() != exp.model.n_x || !exp.spec.state_box.contains(&p) {
                    return Err(CliError::config(format!("simulation.x0 {p:?} must be a state inside model.state_box")));
                }
                exp.x0 = p.clone();
                InitialState::Point(p)
            }
        };

        let val = raw.validation.unwrap_or_default();
        let validation = ValidationConfig {
            samples: positive(or_default(val.samples, "validation.samples", 10_000), "validation.samples")?,
            seed: or_default(val.seed, "validation.seed", 1),
            lipschitz_margin: or_default(val.lipschitz_margin, "validation.lipschitz_margin", 1.2),
            seeds: seeds_ok(or_default(val.seeds, "validation.seeds", vec![1, 2, 3]), "validation.seeds")?,
            steps: positive(or_default(val.steps, "validation.steps", exp.steps as i64), "validation.steps")?,
            verify_samples: positive(
                or_default(val.verify_samples, "validation.verify_samples", 20_000),
                "validation.verify_samples",
            )?,
        };
        if !(validation.lipschitz_margin >= 1.0 && validation.lipschitz_margin.is_finite()) {
            return Err(CliError::config("validation.lipschitz_margin must be >= 1".into()));
        }

        let output_dir = or_default(raw.output.unwrap_or_default().dir, "output.dir", PathBuf::from("out"));

        Ok(Self {
            experiment: exp,
            zone_delta,
            tracking_delta,
            terminal_delta,
            tracking_artifact: ctrl.tracking_artifact,
            terminal_artifact: ctrl.terminal_artifact,
            x0,
            seeds,
            deltas,
            validation,
            output_dir,
        })
    }
}

/// Parses `1,2,5..8` into seeds; ranges are inclusive.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || CliError::config(format!("--seeds: cannot parse '{part}'"));
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    seeds_ok(out, "--seeds")
}

pub fn parse_deltas(s: &str) -> Result<Vec<f64>, CliError> {
    let v = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|_| CliError::config(format!("--deltas: cannot parse '{p}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    deltas_ok(v, "--deltas")
}
