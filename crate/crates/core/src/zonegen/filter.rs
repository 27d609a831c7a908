use rayon::prelude::*;

use super::covering::{CellMask, FiniteCovering};
use crate::controller::StageCost;
use crate::error::Result;
use crate::interval::IntervalBox;
use crate::sysmodel::{ConstraintSpec, EconomicCost, PlantModel};

/// How the disturbance moves the state that the criterion is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviationMode {
    /// `x + f(x,u,w) - f(x,u,0)` with `f` the sampled one-step map.
    Step,
    /// `x + g(x,u,w) - g(x,u,0)` with `g` the continuous right-hand side, i.e. the
    /// disturbance's effect on the rate of change. Equals `Step` for discrete plants.
    Rate,
}

impl DeviationMode {
    pub fn name(&self) -> &'static str {
        match self {
            DeviationMode::Step => "step",
            DeviationMode::Rate => "rate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "step" => Some(DeviationMode::Step),
            "rate" => Some(DeviationMode::Rate),
            _ => None,
        }
    }
}

/// Points of a cell at which the criterion is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleScheme {
    CornersAndCenter,
    /// `k` evenly spaced points per axis including the faces, plus the center.
    Grid(usize),
}

impl SampleScheme {
    pub fn points(&self, cell: &IntervalBox) -> Vec<Vec<f64>> {
        let mut pts = match self {
            SampleScheme::CornersAndCenter => cell.vertices(),
            SampleScheme::Grid(k) => cell.uniform_grid((*k).max(2)),
        };
        pts.push(cell.center());
        pts
    }
}

/// Cost used by the economic criterion.
#[derive(Clone, Debug)]
pub enum CriterionCost {
    /// Economic cost only.
    Economic(EconomicCostFn),
    /// Economic cost plus the target-zone penalty.
    Stage(StageCost),
}

/// Newtype so `CriterionCost` can derive `Debug`.
#[derive(Clone)]
pub struct EconomicCostFn(pub EconomicCost);

impl std::fmt::Debug for EconomicCostFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("EconomicCost")
    }
}

impl CriterionCost {
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            CriterionCost::Economic(f) => (f.0)(x, u),
            CriterionCost::Stage(c) => c.eval(x, u),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CriterionCost::Economic(_) => "economic",
            CriterionCost::Stage(_) => "stage",
        }
    }
}

/// The state shifted by the disturbance's effect under `mode`.
pub fn perturbed_state(model: &PlantModel, x: &[f64], u: &[f64], w: &[f64], mode: DeviationMode) -> Result<Vec<f64>> {
    let zero = vec![0.0; model.n_w];
    let (a, b) = match mode {
        DeviationMode::Rate if model.is_continuous() => (model.rhs(x, u, w)?, model.rhs(x, u, &zero)?),
        _ => (model.step(x, u, w)?, model.step(x, u, &zero)?),
    };
    Ok(x.iter().zip(a.iter().zip(&b)).map(|(xi, (p, q))| xi + p - q).collect())
}

/// Disturbance samples: the vertices of `W` and its center.
pub fn disturbance_samples(spec: &ConstraintSpec) -> Vec<Vec<f64>> {
    let mut ws = spec.disturbance_box.vertices();
    ws.push(spec.disturbance_box.center());
    ws
}

#[allow(clippy::too_many_arguments)]
fn cell_passes(
    cell: &IntervalBox,
    model: &PlantModel,
    cost: &CriterionCost,
    delta: f64,
    input_grid: &[Vec<f64>],
    ws: &[Vec<f64>],
    scheme: SampleScheme,
    mode: DeviationMode,
) -> bool {
    let robust_ok = |x: &[f64], u: &[f64]| {
        ws.iter().all(|w| match perturbed_state(model, x, u, w, mode) {
            Ok(p) => cost.eval(&p, u) <= delta,
            Err(_) => false,
        })
    };
    scheme.points(cell).iter().all(|x| input_grid.iter().any(|u| robust_ok(x, u)))
}

/// Cells on which the criterion cost stays within `delta` for some grid input,
/// uniformly over the disturbance samples. Evaluation failures count as violations.
#[allow(clippy::too_many_arguments)]
pub fn economic_filter(
    covering: &FiniteCovering,
    model: &PlantModel,
    spec: &ConstraintSpec,
    cost: &CriterionCost,
    delta: f64,
    input_grid: &[Vec<f64>],
    scheme: SampleScheme,
    mode: DeviationMode,
) -> CellMask {
    let n = covering.n_cells();
    if delta == f64::INFINITY {
        return CellMask::full(n);
    }
    if input_grid.is_empty() || delta.is_nan() {
        return CellMask::empty(n);
    }
    let ws = disturbance_samples(spec);
    let bits = (0..n)
        .into_par_iter()
        .map(|i| cell_passes(&covering.cell_box(i), model, cost, delta, input_grid, &ws, scheme, mode))
        .collect();
    CellMask::from_bits(bits)
}
