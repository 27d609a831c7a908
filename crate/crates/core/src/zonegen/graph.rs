use rayon::prelude::*;

use super::covering::{CellMask, CellRange, FiniteCovering};
use crate::error::{Result, ZempcError};
use crate::interval::IntervalBox;
use crate::sysmodel::{one_step_deviation_bound, ConstraintSpec, LipschitzEstimate, PlantModel};

/// Over-approximation of a cell's one-step image under all disturbances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InflationRule {
    /// Bounding box of the nominal corner and center images, inflated in every
    /// direction by `L_x r_cell + sqrt(n_x) L_w theta`.
    Isotropic(LipschitzEstimate),
    /// Mean-value form per output component: the nominal center image plus
    /// `margin * (|J_x| rho + |J_w| theta)`, with `|J_x|` and `|J_w|` the elementwise
    /// maxima of finite-difference Jacobians over the cell's corners and center and
    /// `rho`, `theta` the half-widths of the cell and of `W`.
    LocalComponentwise { margin: f64 },
}

impl InflationRule {
    pub fn name(&self) -> &'static str {
        match self {
            InflationRule::Isotropic(_) => "isotropic",
            InflationRule::LocalComponentwise { .. } => "local",
        }
    }
}

/// Successors of a (cell, input) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Successors {
    /// Part of the image may leave the candidate cells.
    Outside,
    /// Every cell in the range is a candidate; the image stays inside their union.
    Cells(CellRange),
}

/// Quantized abstraction of the disturbed dynamics over the candidate cells.
#[derive(Debug, Clone)]
pub struct TransitionGraph {
    covering: FiniteCovering,
    nodes: Vec<usize>,
    /// Position of each covering cell in `nodes`, if it is a node.
    position: Vec<Option<usize>>,
    input_grid: Vec<Vec<f64>>,
    /// Node-major: `edges[pos * n_inputs + j]`.
    edges: Vec<Successors>,
}

impl TransitionGraph {
    pub fn covering(&self) -> &FiniteCovering {
        &self.covering
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn input_grid(&self) -> &[Vec<f64>] {
        &self.input_grid
    }

    pub fn n_inputs(&self) -> usize {
        self.input_grid.len()
    }

    pub fn is_node(&self, cell: usize) -> bool {
        self.position.get(cell).is_some_and(|p| p.is_some())
    }

    pub fn edge(&self, cell: usize, input: usize) -> Option<&Successors> {
        let pos = self.position.get(cell).copied().flatten()?;
        self.edges.get(pos * self.n_inputs() + input)
    }

    /// Successor cell indices, or `None` for the OUTSIDE sink.
    pub fn successor_cells(&self, cell: usize, input: usize) -> Option<Vec<usize>> {
        match self.edge(cell, input)? {
            Successors::Outside => None,
            Successors::Cells(r) => Some(self.covering.range_indices(r)),
        }
    }

    /// The graph over `keep` only; edges reaching a dropped cell go OUTSIDE.
    pub fn restrict(&self, keep: &CellMask) -> TransitionGraph {
        let n_in = self.n_inputs();
        let mut nodes = Vec::new();
        let mut position = vec![None; self.position.len()];
        let mut edges = Vec::new();
        for (pos, cell) in self.nodes.iter().enumerate() {
            if !keep.contains(*cell) {
                continue;
            }
            position[*cell] = Some(nodes.len());
            nodes.push(*cell);
            for e in &self.edges[pos * n_in..(pos + 1) * n_in] {
                let kept = match e {
                    Successors::Cells(r) if self.covering.range_indices(r).iter().all(|c| keep.contains(*c)) => e.clone(),
                    _ => Successors::Outside,
                };
                edges.push(kept);
            }
        }
        TransitionGraph { covering: self.covering.clone(), nodes, position, input_grid: self.input_grid.clone(), edges }
    }
}

fn fd_step(x: f64, scale: f64) -> f64 {
    1e-6 * scale.max(x.abs()).max(1e-3)
}

/// Elementwise-absolute central-difference Jacobians of the nominal map at `x`.
fn abs_jacobians(model: &PlantModel, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (nx, nw) = (model.n_x, model.n_w);
    let zero = vec![0.0; nw];
    let mut jx = vec![0.0; nx * nx];
    let mut jw = vec![0.0; nx * nw];
    let mut p = x.to_vec();
    for j in 0..nx {
        let h = fd_step(x[j], model.state_scale.get(j).copied().unwrap_or(1.0));
        p[j] = x[j] + h;
        let fp = model.step(&p, u, &zero)?;
        p[j] = x[j] - h;
        let fm = model.step(&p, u, &zero)?;
        p[j] = x[j];
        for i in 0..nx {
            jx[i * nx + j] = ((fp[i] - fm[i]) / (2.0 * h)).abs();
        }
    }
    let mut w = zero.clone();
    for j in 0..nw {
        let h = 1e-6;
        w[j] = h;
        let fp = model.step(x, u, &w)?;
        w[j] = -h;
        let fm = model.step(x, u, &w)?;
        w[j] = 0.0;
        for i in 0..nx {
            jw[i * nw + j] = ((fp[i] - fm[i]) / (2.0 * h)).abs();
        }
    }
    Ok((jx, jw))
}

/// Over-approximated image of `cell` under input `u` and every `w` in `W`.
pub fn inflated_image(
    model: &PlantModel,
    spec: &ConstraintSpec,
    cell: &IntervalBox,
    u: &[f64],
    rule: &InflationRule,
) -> Result<IntervalBox> {
    let nx = model.n_x;
    let zero = vec![0.0; model.n_w];
    let mut points = cell.vertices();
    points.push(cell.center());
    let images = points.iter().map(|p| model.step(p, u, &zero)).collect::<Result<Vec<_>>>()?;
    let hull = IntervalBox::bounding(images.iter().map(|v| v.as_slice()));
    match rule {
        InflationRule::Isotropic(est) => {
            let r_cell = 0.5 * (0..nx).map(|i| cell.width(i).powi(2)).sum::<f64>().sqrt();
            let radius = est.l_x * r_cell + one_step_deviation_bound(est, spec.theta(None), nx);
            Ok(hull.inflate(&vec![radius; nx]))
        }
        InflationRule::LocalComponentwise { margin } => {
            let nw = model.n_w;
            let mut jx = vec![0.0; nx * nx];
            let mut jw = vec![0.0; nx * nw];
            for p in &points {
                let (a, b) = abs_jacobians(model, p, u)?;
                jx.iter_mut().zip(&a).for_each(|(m, v)| *m = f64::max(*m, *v));
                jw.iter_mut().zip(&b).for_each(|(m, v)| *m = f64::max(*m, *v));
            }
            let rho = cell.half_widths();
            let centre_img = images.last().expect("center image");
            let mut lo = Vec::with_capacity(nx);
            let mut hi = Vec::with_capacity(nx);
            for i in 0..nx {
                let w_part: f64 = (0..nw).map(|j| jw[i * nw + j] * spec.theta_vec[j]).sum();
                let x_part: f64 = (0..nx).map(|j| jx[i * nx + j] * rho[j]).sum();
                let half = margin * (x_part + w_part);
                // The nominal hull widened by the disturbance term is also included, so the
                // box never excludes a sampled image even where the Jacobian bound is tight.
                lo.push((centre_img[i] - half).min(hull.lo()[i] - margin * w_part));
                hi.push((centre_img[i] + half).max(hull.hi()[i] + margin * w_part));
            }
            IntervalBox::new(lo, hi)
        }
    }
}

/// Builds successor sets over `candidates` for every grid input.
pub fn build_transition_graph(
    candidates: &CellMask,
    covering: &FiniteCovering,
    model: &PlantModel,
    spec: &ConstraintSpec,
    rule: &InflationRule,
    input_grid: &[Vec<f64>],
) -> Result<TransitionGraph> {
    if let InflationRule::LocalComponentwise { margin } = rule {
        if !(*margin >= 1.0) {
            return Err(ZempcError::Config(format!("inflation margin must be >= 1, got {margin}")));
        }
    }
    let nodes = candidates.indices();
    let mut position = vec![None; covering.n_cells()];
    for (p, c) in nodes.iter().enumerate() {
        position[*c] = Some(p);
    }
    let per_node: Vec<Vec<Successors>> = nodes
        .par_iter()
        .map(|cell| {
            let cell_box = covering.cell_box(*cell);
            input_grid
                .iter()
                .map(|u| {
                    let image = inflated_image(model, spec, &cell_box, u, rule).map_err(|e| match e {
                        ZempcError::ModelEvaluation { state, detail } => ZempcError::ModelEvaluation {
                            state,
                            detail: format!("cell {cell}, input {u:?}: {detail}"),
                        },
                        other => other,
                    })?;
                    Ok(classify(covering, candidates, &image))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransitionGraph {
        covering: covering.clone(),
        nodes,
        position,
        input_grid: input_grid.to_vec(),
        edges: per_node.into_iter().flatten().collect(),
    })
}

fn classify(covering: &FiniteCovering, candidates: &CellMask, image: &IntervalBox) -> Successors {
    match covering.overlap_range(image) {
        (Some(range), false) if covering.range_indices(&range).iter().all(|c| candidates.contains(*c)) => {
            Successors::Cells(range)
        }
        _ => Successors::Outside,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zonegen::covering::build_covering;

    fn scalar_spec(theta: f64) -> ConstraintSpec {
        ConstraintSpec::new(
            IntervalBox::new(vec![-1.0], vec![1.0]).unwrap(),
            IntervalBox::new(vec![-0.1], vec![0.1]).unwrap(),
            IntervalBox::new(vec![-theta], vec![theta]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_dynamics_are_self_loops() {
        let model = PlantModel::continuous("zero", 1, 1, 1, 0.1, |_, _, _, o| o[0] = 0.0).unwrap();
        let spec = scalar_spec(0.05);
        let cov = build_covering(&spec.state_box, &[8]).unwrap();
        let g = build_transition_graph(
            &CellMask::full(8),
            &cov,
            &model,
            &spec,
            &InflationRule::Isotropic(LipschitzEstimate::exact(0.0, 0.0)),
            &[vec![0.0]],
        )
        .unwrap();
        for c in 0..8 {
            assert_eq!(g.successor_cells(c, 0), Some(vec![c]));
        }
    }

    #[test]
    fn translation_hits_hand_computed_neighbours() {
        // x+ = x + u on [-1, 1] in 8 cells of width 0.25; u = 0.1 shifts cell k to
        // [lo_k + 0.1, hi_k + 0.1], overlapping cells k and k+1.
        let model = PlantModel::discrete("shift", 1, 1, 1, |x, u, _, o| o[0] = x[0] + u[0]).unwrap();
        let spec = scalar_spec(0.05);
        let cov = build_covering(&spec.state_box, &[8]).unwrap();
        let rule = InflationRule::Isotropic(LipschitzEstimate::exact(0.0, 0.0));
        let g = build_transition_graph(&CellMask::full(8), &cov, &model, &spec, &rule, &[vec![0.0], vec![0.1]]).unwrap();
        for c in 0..8 {
            assert_eq!(g.successor_cells(c, 0), Some(vec![c]));
        }
        for c in 0..7 {
            assert_eq!(g.successor_cells(c, 1), Some(vec![c, c + 1]));
        }
        assert_eq!(g.successor_cells(7, 1), None);
    }

    #[test]
    fn local_rule_is_exact_for_linear_maps() {
        let model = PlantModel::discrete("lin", 1, 1, 1, |x, u, w, o| o[0] = 0.5 * x[0] + u[0] + w[0]).unwrap();
        let spec = scalar_spec(0.05);
        let cell = IntervalBox::new(vec![0.2], vec![0.4]).unwrap();
        let b = inflated_image(&model, &spec, &cell, &[0.1], &InflationRule::LocalComponentwise { margin: 1.0 }).unwrap();
        assert!((b.lo()[0] - 0.15).abs() < 1e-9 && (b.hi()[0] - 0.35).abs() < 1e-9, "{b}");
    }

    #[test]
    fn larger_disturbance_never_removes_edges() {
        let model = PlantModel::discrete("lin", 1, 1, 1, |x, u, w, o| o[0] = 0.9 * x[0] + u[0] + w[0]).unwrap();
        let grid: Vec<Vec<f64>> = (0..5).map(|k| vec![-0.1 + 0.05 * k as f64]).collect();
        let cov = build_covering(&IntervalBox::new(vec![-1.0], vec![1.0]).unwrap(), &[40]).unwrap();
        let all = CellMask::full(40);
        let rule = InflationRule::LocalComponentwise { margin: 1.0 };
        let small = build_transition_graph(&all, &cov, &model, &scalar_spec(0.01), &rule, &grid).unwrap();
        let large = build_transition_graph(&all, &cov, &model, &scalar_spec(0.04), &rule, &grid).unwrap();
        for c in 0..40 {
            for j in 0..grid.len() {
                match (small.successor_cells(c, j), large.successor_cells(c, j)) {
                    (Some(a), Some(b)) => assert!(a.iter().all(|x| b.contains(x))),
                    (None, b) => assert!(b.is_none()),
                    (Some(_), None) => {}
                }
            }
        }
    }

    #[test]
    fn restriction_turns_lost_edges_outside() {
        let model = PlantModel::discrete("shift", 1, 1, 1, |x, u, _, o| o[0] = x[0] + u[0]).unwrap();
        let spec = scalar_spec(0.05);
        let cov = build_covering(&spec.state_box, &[4]).unwrap();
        let rule = InflationRule::Isotropic(LipschitzEstimate::exact(0.0, 0.0));
        let g = build_transition_graph(&CellMask::full(4), &cov, &model, &spec, &rule, &[vec![0.1]]).unwrap();
        let r = g.restrict(&CellMask::from_indices(4, &[0, 1, 3]));
        assert_eq!(r.successor_cells(0, 0), Some(vec![0, 1]));
        assert_eq!(r.successor_cells(1, 0), None);
        assert!(!r.is_node(2));
    }

    #[test]
    fn evaluation_error_names_the_cell() {
        let model = PlantModel::discrete("blowup", 1, 1, 1, |x, _, _, o| o[0] = if x[0] > 0.75 { f64::NAN } else { x[0] }).unwrap();
        let spec = scalar_spec(0.05);
        let cov = build_covering(&IntervalBox::new(vec![0.0], vec![1.0]).unwrap(), &[10]).unwrap();
        let rule = InflationRule::Isotropic(LipschitzEstimate::exact(1.0, 1.0));
        let err = build_transition_graph(&CellMask::full(10), &cov, &model, &spec, &rule, &[vec![0.0]]).unwrap_err();
        match err {
            ZempcError::ModelEvaluation { detail, state } => {
                assert!(state[0] > 0.7, "{state:?}");
                assert!(["cell 7", "cell 8", "cell 9"].iter().any(|c| detail.contains(c)), "{detail}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
