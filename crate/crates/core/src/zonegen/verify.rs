use super::covering::TOUCH_TOLERANCE;
use super::graph::{inflated_image, InflationRule};
use super::{EconomicZone, InflationKind};
use crate::error::Result;
use crate::sampling::UniformSampler;
use crate::sysmodel::{ConstraintSpec, PlantModel};

/// Post-hoc soundness report for a computed zone.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneVerification {
    /// inner box cells kept, kept cells are candidates, inner box inside the target zone.
    pub containment_ok: bool,
    pub cells_checked: usize,
    /// Kept cells whose certified inflated image reaches a cell outside the kernel.
    pub image_violations: Vec<usize>,
    pub mc_samples: usize,
    /// Sampled `(cell, state)` pairs whose true disturbed successor left the kernel.
    pub mc_violations: Vec<(usize, Vec<f64>)>,
}

impl ZoneVerification {
    pub fn passed(&self) -> bool {
        self.containment_ok && self.image_violations.is_empty() && self.mc_violations.is_empty()
    }
}

/// Re-checks a zone independently of the graph: inflated images are probed by
/// point location on a lattice finer than half a cell, and random disturbed
/// transitions under the certified inputs must stay in the kernel.
pub fn verify_zone(
    zone: &EconomicZone,
    model: &PlantModel,
    spec: &ConstraintSpec,
    mc_samples: usize,
    seed: u64,
) -> Result<ZoneVerification> {
    let cov = &zone.covering;
    let containment_ok = cov.range_indices(&zone.inner_range).iter().all(|c| zone.kept.contains(*c))
        && zone.kept.is_subset(&zone.candidates)
        && zone.target_zone.contains_box(&zone.inner_box);

    let rule = match (zone.options.inflation, zone.lipschitz) {
        (InflationKind::Local { margin }, _) => InflationRule::LocalComponentwise { margin },
        (InflationKind::Isotropic, Some(est)) => InflationRule::Isotropic(est),
        (InflationKind::Isotropic, None) => InflationRule::LocalComponentwise { margin: 1.0 },
    };
    let kept = zone.kept.indices();
    let mut image_violations = Vec::new();
    for c in &kept {
        let Some(j) = zone.certificates[*c] else {
            image_violations.push(*c);
            continue;
        };
        let image = inflated_image(model, spec, &cov.cell_box(*c), &zone.input_grid[j], &rule)?;
        let axes: Vec<Vec<f64>> = (0..cov.dim())
            .map(|i| {
                let eps = TOUCH_TOLERANCE * cov.widths()[i];
                let (a, b) = (image.lo()[i] + eps, image.hi()[i] - eps);
                let steps = (((b - a) / (0.5 * cov.widths()[i])).ceil() as usize).max(1);
                (0..=steps).map(|k| a + (b - a) * k as f64 / steps as f64).collect()
            })
            .collect();
        let total: usize = axes.iter().map(Vec::len).product();
        let escapes = (0..total).any(|mut flat| {
            let p: Vec<f64> = axes
                .iter()
                .map(|ax| {
                    let v = ax[flat % ax.len()];
                    flat /= ax.len();
                    v
                })
                .collect();
            cov.locate(&p).is_none_or(|cell| !zone.kept.contains(cell))
        });
        if escapes {
            image_violations.push(*c);
        }
    }

    let mut rng = UniformSampler::new(seed);
    let mut mc_violations = Vec::new();
    if !kept.is_empty() {
        for _ in 0..mc_samples {
            let c = kept[rng.index(kept.len())];
            let Some(j) = zone.certificates[c] else { continue };
            let x = rng.in_box(&cov.cell_box(c));
            let w = rng.in_box(&spec.disturbance_box);
            let next = model.step(&x, &zone.input_grid[j], &w)?;
            if cov.locate(&next).is_none_or(|n| !zone.kept.contains(n)) {
                mc_violations.push((c, x));
            }
        }
    }
    Ok(ZoneVerification {
        containment_ok,
        cells_checked: kept.len(),
        image_violations,
        mc_samples,
        mc_violations,
    })
}
