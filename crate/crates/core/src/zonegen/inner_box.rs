use super::covering::{CellMask, CellRange, FiniteCovering};
use crate::error::{Result, ZempcError};
use crate::interval::IntervalBox;

/// Largest axis-aligned block of kept cells and the box it spans.
///
/// Exact on the cell grid for one and two dimensions (longest run, and the
/// maximal-rectangle histogram sweep); greedy face-by-face growth from `seed_cell`
/// (or the kept cell nearest the kept centroid) in higher dimensions. Ties keep the
/// first block found in index order.
pub fn extract_inner_box(kept: &CellMask, covering: &FiniteCovering, seed_cell: Option<usize>) -> Result<(IntervalBox, CellRange)> {
    if kept.is_empty() {
        return Err(ZempcError::ZoneConstruction(
            "invariance kernel is empty; increase the risk factor or refine the covering or input grid".into(),
        ));
    }
    let range = match covering.dim() {
        1 => longest_run(kept, covering.resolution()[0]),
        2 => max_rectangle(kept, covering.resolution()[0], covering.resolution()[1]),
        _ => greedy_block(kept, covering, seed_cell),
    };
    Ok((covering.range_box(&range), range))
}

fn longest_run(kept: &CellMask, n: usize) -> CellRange {
    let (mut best, mut best_start, mut start) = (0, 0, 0);
    for k in 0..=n {
        if k < n && kept.contains(k) {
            continue;
        }
        if k - start > best {
            best = k - start;
            best_start = start;
        }
        start = k + 1;
    }
    CellRange { lo: vec![best_start], hi: vec![best_start + best - 1] }
}

fn max_rectangle(kept: &CellMask, nx: usize, ny: usize) -> CellRange {
    let mut heights = vec![0usize; nx];
    let mut best = (0usize, CellRange { lo: vec![0, 0], hi: vec![0, 0] });
    let mut stack: Vec<usize> = Vec::with_capacity(nx + 1);
    for y in 0..ny {
        for (x, h) in heights.iter_mut().enumerate() {
            *h = if kept.contains(y * nx + x) { *h + 1 } else { 0 };
        }
        stack.clear();
        for x in 0..=nx {
            let h = if x < nx { heights[x] } else { 0 };
            while let Some(&top) = stack.last() {
                if heights[top] < h {
                    break;
                }
                stack.pop();
                let height = heights[top];
                let left = stack.last().map_or(0, |s| s + 1);
                let area = height * (x - left);
                if height > 0 && area > best.0 {
                    best = (area, CellRange { lo: vec![left, y + 1 - height], hi: vec![x - 1, y] });
                }
            }
            stack.push(x);
        }
    }
    best.1
}

fn greedy_block(kept: &CellMask, covering: &FiniteCovering, seed_cell: Option<usize>) -> CellRange {
    let d = covering.dim();
    let seed = seed_cell.filter(|c| kept.contains(*c)).unwrap_or_else(|| {
        let cells = kept.indices();
        let mut centroid = vec![0.0; d];
        for c in &cells {
            for (i, k) in covering.multi_index(*c).iter().enumerate() {
                centroid[i] += *k as f64 / cells.len() as f64;
            }
        }
        *cells
            .iter()
            .min_by(|a, b| {
                let dist = |c: usize| {
                    covering.multi_index(c).iter().zip(&centroid).map(|(k, m)| (*k as f64 - m).powi(2)).sum::<f64>()
                };
                dist(**a).total_cmp(&dist(**b))
            })
            .expect("kept is nonempty")
    });
    let m = covering.multi_index(seed);
    let mut range = CellRange { lo: m.clone(), hi: m };
    loop {
        let mut best: Option<(usize, CellRange)> = None;
        for axis in 0..d {
            for upper in [false, true] {
                let mut grown = range.clone();
                if upper {
                    if grown.hi[axis] + 1 >= covering.resolution()[axis] {
                        continue;
                    }
                    grown.hi[axis] += 1;
                } else {
                    if grown.lo[axis] == 0 {
                        continue;
                    }
                    grown.lo[axis] -= 1;
                }
                let size = grown.cell_count();
                if grown.multi_indices().all(|mi| kept.contains(covering.index(&mi)))
                    && best.as_ref().is_none_or(|(s, _)| size > *s)
                {
                    best = Some((size, grown));
                }
            }
        }
        match best {
            Some((_, r)) => range = r,
            None => return range,
        }
    }
}
