use super::{ConstraintSpec, PlantModel};
use crate::error::{Result, ZempcError};
use crate::sampling::UniformSampler;

/// Sampled Lipschitz constants of the one-step map with respect to state and disturbance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    pub l_x: f64,
    pub l_w: f64,
    pub sample_count: usize,
    /// Multiplicative inflation applied to the sampled maxima.
    pub margin: f64,
}

impl LipschitzEstimate {
    /// Known constants, e.g. for linear test systems.
    pub fn exact(l_x: f64, l_w: f64) -> Self {
        Self { l_x, l_w, sample_count: 0, margin: 1.0 }
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Estimates `L_x` and `L_w` by maximising difference quotients over random samples.
///
/// Half the state pairs are drawn independently over `X`; the other half are local
/// perturbations at scales between 1e-1 and 1e-4 of the box widths, which is where
/// the supremum of a smooth map's difference quotient is approached. Disturbance
/// quotients are taken against the nominal successor, alternating between interior
/// draws and vertices of `W`.
pub fn estimate_lipschitz(
    model: &PlantModel,
    spec: &ConstraintSpec,
    n_samples: usize,
    seed: u64,
    margin: f64,
) -> Result<LipschitzEstimate> {
    if n_samples < 2 {
        return Err(ZempcError::Estimation(format!("need at least 2 samples, got {n_samples}")));
    }
    if !(margin >= 1.0) {
        return Err(ZempcError::Estimation(format!("margin must be >= 1, got {margin}")));
    }
    let mut rng = UniformSampler::new(seed);
    let x_box = &spec.state_box;
    let w_box = &spec.disturbance_box;
    let w_vertices = w_box.vertices();
    let zero_w = vec![0.0; model.n_w];
    let (mut l_x, mut l_w) = (0.0_f64, 0.0_f64);
    let (mut x_pairs, mut w_pairs) = (0usize, 0usize);

    for k in 0..n_samples {
        let x = rng.in_box(x_box);
        let u = rng.in_box(&spec.input_box);
        let z = if k % 2 == 0 {
            rng.in_box(x_box)
        } else {
            let scale = 10f64.powf(-rng.in_range(1.0, 4.0));
            let p: Vec<f64> = (0..x.len())
                .map(|i| x[i] + scale * x_box.width(i) * rng.in_range(-1.0, 1.0))
                .collect();
            x_box.clamp(&p)
        };
        let dist = euclid(&x, &z);
        let fx = model.step(&x, &u, &zero_w)?;
        if dist > 0.0 {
            let fz = model.step(&z, &u, &zero_w)?;
            l_x = l_x.max(euclid(&fx, &fz) / dist);
            x_pairs += 1;
        }
        let w = if k % 2 == 0 { rng.in_box(w_box) } else { w_vertices[rng.index(w_vertices.len())].clone() };
        let w_norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if w_norm > 0.0 {
            let fw = model.step(&x, &u, &w)?;
            l_w = l_w.max(euclid(&fw, &fx) / w_norm);
            w_pairs += 1;
        }
    }
    if x_pairs == 0 || w_pairs == 0 {
        return Err(ZempcError::Estimation("all sampled pairs were degenerate".into()));
    }
    Ok(LipschitzEstimate { l_x: margin * l_x, l_w: margin * l_w, sample_count: n_samples, margin })
}

/// One-step gap between the disturbed and nominal successor: `sqrt(n_x) * L_w * theta`.
///
/// The dimension factor uses `n_x` (not `n_w`) to match the published bound.
pub fn one_step_deviation_bound(est: &LipschitzEstimate, theta: f64, n_x: usize) -> f64 {
    (n_x as f64).sqrt() * est.l_w * theta
}
