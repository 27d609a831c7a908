pub mod artifact;
pub mod covering;
pub mod filter;
pub mod graph;
pub mod inner_box;
pub mod kernel;

pub use artifact::{cells_csv, ZoneArtifact};
pub use covering::{build_covering, CellMask, CellRange, FiniteCovering};
pub use filter::{economic_filter, CriterionCost, DeviationMode, EconomicCostFn, SampleScheme};
pub use graph::{build_transition_graph, inflated_image, InflationRule, Successors, TransitionGraph};
pub use inner_box::extract_inner_box;
pub use kernel::{invariance_kernel, KernelResult};
pub mod verify;

pub use verify::{verify_zone, ZoneVerification};

use log::{debug, info};

use crate::controller::StageCost;
use crate::error::{Result, ZempcError};
use crate::interval::IntervalBox;
use crate::sysmodel::{estimate_lipschitz, ConstraintSpec, EconomicCost, LipschitzEstimate, PlantModel};

/// Which cost the economic criterion thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriterionKind {
    /// Economic cost plus the target-zone penalty with the option weights.
    Stage,
    /// Economic cost alone.
    Economic,
}

impl CriterionKind {
    pub fn name(&self) -> &'static str {
        match self {
            CriterionKind::Stage => "stage",
            CriterionKind::Economic => "economic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stage" => Some(CriterionKind::Stage),
            "economic" => Some(CriterionKind::Economic),
            _ => None,
        }
    }
}

/// Graph inflation choice; the isotropic rule uses a sampled Lipschitz estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InflationKind {
    Local { margin: f64 },
    Isotropic,
}

impl InflationKind {
    pub fn name(&self) -> &'static str {
        match self {
            InflationKind::Local { .. } => "local",
            InflationKind::Isotropic => "isotropic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneOptions {
    /// Cells per axis over the target zone.
    pub resolution: Vec<usize>,
    /// Grid points per input axis.
    pub input_points: usize,
    pub sample_scheme: SampleScheme,
    pub criterion: CriterionKind,
    pub deviation: DeviationMode,
    pub inflation: InflationKind,
    /// Zone-penalty weights of the stage-cost criterion.
    pub c1: f64,
    pub c2: f64,
    pub lipschitz_samples: usize,
    pub lipschitz_margin: f64,
    pub seed: u64,
}

impl ZoneOptions {
    pub fn new(resolution: Vec<usize>) -> Self {
        Self {
            resolution,
            input_points: 31,
            sample_scheme: SampleScheme::CornersAndCenter,
            criterion: CriterionKind::Stage,
            deviation: DeviationMode::Rate,
            inflation: InflationKind::Local { margin: 1.1 },
            c1: 0.0,
            c2: 10.0,
            lipschitz_samples: 10_000,
            lipschitz_margin: 1.2,
            seed: 0,
        }
    }

    pub fn cstr_default() -> Self {
        Self::new(vec![50, 50])
    }
}

/// Output of the zone construction with every intermediate set kept for audit.
#[derive(Debug, Clone)]
pub struct EconomicZone {
    pub delta: f64,
    pub target_zone: IntervalBox,
    pub covering: FiniteCovering,
    pub input_grid: Vec<Vec<f64>>,
    /// Cells passing the economic criterion.
    pub candidates: CellMask,
    /// Invariance kernel of the candidates.
    pub kept: CellMask,
    pub certificates: Vec<Option<usize>>,
    pub inner_box: IntervalBox,
    pub inner_range: CellRange,
    pub lipschitz: Option<LipschitzEstimate>,
    pub options: ZoneOptions,
}

/// Builds the economic zone of `target_zone` at risk factor `delta`.
pub fn compute_economic_zone(
    model: &PlantModel,
    spec: &ConstraintSpec,
    target_zone: &IntervalBox,
    delta: f64,
    economic: EconomicCost,
    options: &ZoneOptions,
) -> Result<EconomicZone> {
    if target_zone.dim() != model.n_x || !spec.state_box.contains_box(target_zone) {
        return Err(ZempcError::Config(format!("target zone {target_zone} must lie in the state box {}", spec.state_box)));
    }
    if delta.is_nan() {
        return Err(ZempcError::Config("risk factor is NaN".into()));
    }
    if options.input_points == 0 {
        return Err(ZempcError::Config("input grid needs at least one point".into()));
    }
    let covering = build_covering(target_zone, &options.resolution)?;
    let input_grid = spec.input_box.uniform_grid(options.input_points);
    let criterion = match options.criterion {
        CriterionKind::Stage => {
            CriterionCost::Stage(StageCost::new(economic, target_zone.clone(), options.c1, options.c2))
        }
        CriterionKind::Economic => CriterionCost::Economic(EconomicCostFn(economic)),
    };
    let (rule, lipschitz) = match options.inflation {
        InflationKind::Local { margin } => (InflationRule::LocalComponentwise { margin }, None),
        InflationKind::Isotropic => {
            let est = estimate_lipschitz(model, spec, options.lipschitz_samples, options.seed, options.lipschitz_margin)?;
            (InflationRule::Isotropic(est), Some(est))
        }
    };
    let candidates = economic_filter(
        &covering,
        model,
        spec,
        &criterion,
        delta,
        &input_grid,
        options.sample_scheme,
        options.deviation,
    );
    debug!("delta {delta}: {} of {} cells pass the economic criterion", candidates.count(), covering.n_cells());
    let graph = build_transition_graph(&candidates, &covering, model, spec, &rule, &input_grid)?;
    let kernel = invariance_kernel(&candidates, &graph);
    debug!("delta {delta}: kernel has {} cells after {} sweeps", kernel.kept.count(), kernel.sweeps);
    let (inner_box, inner_range) = extract_inner_box(&kernel.kept, &covering, None).map_err(|e| match e {
        ZempcError::ZoneConstruction(msg) => ZempcError::ZoneConstruction(format!("delta {delta}: {msg}")),
        other => other,
    })?;
    info!("delta {delta}: economic zone {inner_box} ({} kernel cells)", kernel.kept.count());
    Ok(EconomicZone {
        delta,
        target_zone: target_zone.clone(),
        covering,
        input_grid,
        candidates,
        kept: kernel.kept,
        certificates: kernel.certificates,
        inner_box,
        inner_range,
        lipschitz,
        options: options.clone(),
    })
}
