//! Brute-force reference computations used by the validation suite.

use crate::controller::zone_penalty;
use crate::error::Result;
use crate::interval::IntervalBox;
use crate::sampling::UniformSampler;
use crate::sysmodel::{ConstraintSpec, PlantModel};
use crate::zonegen::covering::TOUCH_TOLERANCE;
use crate::zonegen::{build_covering, build_transition_graph, invariance_kernel, CellMask, InflationRule};

#[derive(Debug, Clone, PartialEq)]
pub struct KernelOracleReport {
    pub gain: f64,
    pub cells: usize,
    pub module_kept: Vec<usize>,
    pub brute_kept: Vec<usize>,
}

impl KernelOracleReport {
    pub fn passed(&self) -> bool {
        self.module_kept == self.brute_kept
    }
}

/// Kernel of `x+ = gain x + u + w` on `X = [-1, 1]`, `U = [-0.1, 0.1]`, `W = [-0.05, 0.05]`,
/// from the module and from plain set iteration on exact interval images.
pub fn scalar_kernel_oracle(gain: f64, cells: usize, input_points: usize) -> Result<KernelOracleReport> {
    let spec = ConstraintSpec::new(
        IntervalBox::new(vec![-1.0], vec![1.0])?,
        IntervalBox::new(vec![-0.1], vec![0.1])?,
        IntervalBox::new(vec![-0.05], vec![0.05])?,
    )?;
    let model = PlantModel::discrete("scalar", 1, 1, 1, move |x, u, w, o| o[0] = gain * x[0] + u[0] + w[0])?;
    let covering = build_covering(&spec.state_box, &[cells])?;
    let grid = spec.input_box.uniform_grid(input_points);
    let rule = InflationRule::LocalComponentwise { margin: 1.0 };
    let graph = build_transition_graph(&CellMask::full(cells), &covering, &model, &spec, &rule, &grid)?;
    let module_kept = invariance_kernel(&CellMask::full(cells), &graph).kept.indices();

    let width = 2.0 / cells as f64;
    let edge = |k: usize| -1.0 + width * k as f64;
    let eps = TOUCH_TOLERANCE * width;
    // Per (cell, input): the cells the image overlaps, or None when it leaves X.
    let images: Vec<Vec<Option<Vec<usize>>>> = (0..cells)
        .map(|c| {
            grid.iter()
                .map(|u| {
                    let (a, b) = (gain * edge(c), gain * edge(c + 1));
                    let lo = a.min(b) + u[0] - 0.05;
                    let hi = a.max(b) + u[0] + 0.05;
                    if lo < -1.0 - eps || hi > 1.0 + eps {
                        return None;
                    }
                    Some((0..cells).filter(|k| hi > edge(*k) + eps && lo < edge(k + 1) - eps).collect())
                })
                .collect()
        })
        .collect();
    let mut alive = vec![true; cells];
    loop {
        let next: Vec<bool> = (0..cells)
            .map(|c| {
                alive[c]
                    && images[c].iter().any(|img| img.as_ref().is_some_and(|s| s.iter().all(|k| alive[*k])))
            })
            .collect();
        if next == alive {
            break;
        }
        alive = next;
    }
    let brute_kept = (0..cells).filter(|c| alive[*c]).collect();
    Ok(KernelOracleReport { gain, cells, module_kept, brute_kept })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyOracleReport {
    pub instances: usize,
    pub max_error: f64,
}

impl PenaltyOracleReport {
    pub fn passed(&self) -> bool {
        self.max_error <= 1e-6
    }
}

/// Closed-form zone penalty against a zooming grid minimisation over the zone, on
/// random two-dimensional instances.
pub fn penalty_oracle(instances: usize, seed: u64) -> Result<PenaltyOracleReport> {
    let mut rng = UniformSampler::new(seed);
    let mut max_error = 0.0_f64;
    for _ in 0..instances {
        let lo = [rng.in_range(-1.0, 0.0), rng.in_range(-1.0, 0.0)];
        let hi = [lo[0] + rng.in_range(0.0, 1.0), lo[1] + rng.in_range(0.0, 1.0)];
        let zone = IntervalBox::new(lo.to_vec(), hi.to_vec())?;
        let z = [rng.in_range(-2.0, 2.0), rng.in_range(-2.0, 2.0)];
        let (c1, c2) = (rng.in_range(0.0, 5.0), rng.in_range(0.0, 5.0));
        // Both norms split over the axes, so each axis is searched on its own.
        let mut best = 0.0;
        for i in 0..2 {
            let f = |p: f64| {
                let d = (z[i] - p).abs();
                c1 * d + c2 * d * d
            };
            let (mut a, mut b) = (lo[i], hi[i]);
            let (mut m, mut arg) = (f64::INFINITY, a);
            for _ in 0..10 {
                let step = (b - a) / 100.0;
                for k in 0..=100 {
                    let p = a + step * k as f64;
                    if f(p) < m {
                        m = f(p);
                        arg = p;
                    }
                }
                (a, b) = ((arg - step).max(lo[i]), (arg + step).min(hi[i]));
            }
            best += m;
        }
        max_error = max_error.max((zone_penalty(&z, &zone, c1, c2) - best).abs());
    }
    Ok(PenaltyOracleReport { instances, max_error })
}
