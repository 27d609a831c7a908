use rayon::prelude::*;

use super::covering::CellMask;
use super::graph::{Successors, TransitionGraph};

/// Greatest control-invariant subset of the candidates under the graph abstraction.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelResult {
    pub kept: CellMask,
    /// For each kept cell, an input-grid index whose successors are all kept.
    pub certificates: Vec<Option<usize>>,
    pub sweeps: usize,
}

fn admissible(graph: &TransitionGraph, survivors: &CellMask, cell: usize, input: usize) -> bool {
    match graph.edge(cell, input) {
        Some(Successors::Cells(r)) => r.multi_indices().all(|m| survivors.contains(graph.covering().index(&m))),
        _ => false,
    }
}

fn certify(graph: &TransitionGraph, survivors: &CellMask, cell: usize, hint: Option<usize>) -> Option<usize> {
    if let Some(j) = hint {
        if admissible(graph, survivors, cell, j) {
            return Some(j);
        }
    }
    (0..graph.n_inputs()).find(|j| admissible(graph, survivors, cell, *j))
}

/// Repeatedly deletes cells without an input keeping them inside the survivors.
///
/// Each sweep scans all survivors against the survivor set of the previous sweep and
/// applies deletions afterwards, so the result does not depend on the scan order or
/// the number of threads.
pub fn invariance_kernel(candidates: &CellMask, graph: &TransitionGraph) -> KernelResult {
    let n = candidates.n_cells();
    let mut survivors = CellMask::from_bits((0..n).map(|c| candidates.contains(c) && graph.is_node(c)).collect());
    let mut certificates: Vec<Option<usize>> = vec![None; n];
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let live = survivors.indices();
        let found: Vec<(usize, Option<usize>)> =
            live.par_iter().map(|c| (*c, certify(graph, &survivors, *c, certificates[*c]))).collect();
        let mut removed = false;
        for (c, cert) in found {
            certificates[c] = cert;
            if cert.is_none() {
                survivors.remove(c);
                removed = true;
            }
        }
        if !removed {
            break;
        }
    }
    KernelResult { kept: survivors, certificates, sweeps }
}
