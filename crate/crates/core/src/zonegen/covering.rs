use crate::error::{Result, ZempcError};
use crate::interval::IntervalBox;

/// Relative tolerance (in cell widths) under which touching boxes count as intersecting.
pub const TOUCH_TOLERANCE: f64 = 1e-9;

/// Uniform partition of a box into half-open cells.
///
/// Cell `k` along axis `i` is `[lo_i + k w_i, lo_i + (k+1) w_i)`; the last cell on
/// each axis is closed on its upper face so the cells tile the closed base box.
/// Flat indices run with axis 0 fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteCovering {
    base_box: IntervalBox,
    resolution: Vec<usize>,
    widths: Vec<f64>,
    strides: Vec<usize>,
}

/// Inclusive per-axis index range of cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellRange {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl CellRange {
    pub fn cell_count(&self) -> usize {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l + 1).product()
    }

    pub fn contains(&self, multi: &[usize]) -> bool {
        multi.iter().enumerate().all(|(i, k)| *k >= self.lo[i] && *k <= self.hi[i])
    }

    /// Multi-indices in the range, axis 0 fastest.
    pub fn multi_indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        let total = self.cell_count();
        (0..total).map(move |mut flat| {
            self.lo
                .iter()
                .zip(&self.hi)
                .map(|(l, h)| {
                    let span = h - l + 1;
                    let k = l + flat % span;
                    flat /= span;
                    k
                })
                .collect()
        })
    }
}

impl FiniteCovering {
    pub fn base_box(&self) -> &IntervalBox {
        &self.base_box
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn n_cells(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    pub fn multi_index(&self, mut index: usize) -> Vec<usize> {
        self.resolution
            .iter()
            .map(|r| {
                let k = index % r;
                index /= r;
                k
            })
            .collect()
    }

    /// Coordinate of grid line `k` on `axis`; line `resolution` is the upper face.
    pub fn edge(&self, axis: usize, k: usize) -> f64 {
        if k >= self.resolution[axis] {
            self.base_box.hi()[axis]
        } else {
            self.base_box.lo()[axis] + self.widths[axis] * k as f64
        }
    }

    pub fn cell_box(&self, index: usize) -> IntervalBox {
        let m = self.multi_index(index);
        let lo = (0..self.dim()).map(|i| self.edge(i, m[i])).collect();
        let hi = (0..self.dim()).map(|i| self.edge(i, m[i] + 1)).collect();
        IntervalBox::new(lo, hi).expect("cell bounds are ordered")
    }

    pub fn cell_center(&self, index: usize) -> Vec<f64> {
        self.cell_box(index).center()
    }

    /// Half-diagonal of a generic cell.
    pub fn cell_radius(&self) -> f64 {
        0.5 * self.widths.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// The unique cell containing `x`, or `None` outside the base box.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if !self.base_box.contains(x) {
            return None;
        }
        let mut multi = Vec::with_capacity(self.dim());
        for (i, v) in x.iter().enumerate() {
            let r = self.resolution[i];
            let guess = ((v - self.base_box.lo()[i]) / self.widths[i]).floor();
            let mut k = if guess < 0.0 { 0 } else { (guess as usize).min(r - 1) };
            while k > 0 && *v < self.edge(i, k) {
                k -= 1;
            }
            while k + 1 < r && *v >= self.edge(i, k + 1) {
                k += 1;
            }
            multi.push(k);
        }
        Some(self.index(&multi))
    }

    /// Cells overlapping `b` with positive measure, and whether `b` leaves the base box.
    ///
    /// Along each axis the range runs from the cell holding `b`'s lower face to the
    /// cell holding its upper face approached from below, so a box ending exactly on
    /// a grid line does not pick up the next cell, and a degenerate box maps to the
    /// half-open cell containing it. Faces within `TOUCH_TOLERANCE` cell widths of a
    /// grid line are treated as lying on it.
    pub fn overlap_range(&self, b: &IntervalBox) -> (Option<CellRange>, bool) {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        let mut exits = false;
        for i in 0..self.dim() {
            let w = self.widths[i];
            let eps = TOUCH_TOLERANCE * w;
            let r = self.resolution[i] as i64;
            let (base_lo, base_hi) = (self.base_box.lo()[i], self.base_box.hi()[i]);
            let (a, c) = (b.lo()[i], b.hi()[i]);
            if a < base_lo - eps || c > base_hi + eps {
                exits = true;
            }
            if c < base_lo - eps || a > base_hi + eps {
                return (None, true);
            }
            let k0 = (((a - base_lo) / w + TOUCH_TOLERANCE).floor() as i64).clamp(0, r - 1);
            let k1 = ((((c - base_lo) / w - TOUCH_TOLERANCE).ceil() as i64) - 1).clamp(k0, r - 1);
            lo.push(k0 as usize);
            hi.push(k1 as usize);
        }
        (Some(CellRange { lo, hi }), exits)
    }

    pub fn range_indices(&self, range: &CellRange) -> Vec<usize> {
        range.multi_indices().map(|m| self.index(&m)).collect()
    }

    /// Box spanned by a cell range.
    pub fn range_box(&self, range: &CellRange) -> IntervalBox {
        let lo = (0..self.dim()).map(|i| self.edge(i, range.lo[i])).collect();
        let hi = (0..self.dim()).map(|i| self.edge(i, range.hi[i] + 1)).collect();
        IntervalBox::new(lo, hi).expect("range bounds are ordered")
    }
}

/// Uniform covering of `base` with `resolution[i]` cells along axis `i`.
pub fn build_covering(base: &IntervalBox, resolution: &[usize]) -> Result<FiniteCovering> {
    if resolution.len() != base.dim() {
        return Err(ZempcError::Config(format!(
            "resolution has {} entries for a {}-dimensional box",
            resolution.len(),
            base.dim()
        )));
    }
    if let Some(i) = resolution.iter().position(|r| *r == 0) {
        return Err(ZempcError::Config(format!("resolution along axis {i} must be at least 1")));
    }
    if let Some(i) = (0..base.dim()).find(|i| base.width(*i) <= 0.0) {
        return Err(ZempcError::Config(format!("covering box is degenerate along axis {i}")));
    }
    let widths = (0..base.dim()).map(|i| base.width(i) / resolution[i] as f64).collect();
    let mut strides = Vec::with_capacity(resolution.len());
    let mut s = 1;
    for r in resolution {
        strides.push(s);
        s *= r;
    }
    Ok(FiniteCovering { base_box: base.clone(), resolution: resolution.to_vec(), widths, strides })
}

/// Subset of the cells of a covering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellMask {
    bits: Vec<bool>,
}

impl CellMask {
    pub fn empty(n_cells: usize) -> Self {
        Self { bits: vec![false; n_cells] }
    }

    pub fn full(n_cells: usize) -> Self {
        Self { bits: vec![true; n_cells] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn from_indices(n_cells: usize, indices: &[usize]) -> Self {
        let mut m = Self::empty(n_cells);
        for i in indices {
            m.bits[*i] = true;
        }
        m
    }

    pub fn n_cells(&self) -> usize {
        self.bits.len()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.bits.get(index).copied().unwrap_or(false)
    }

    pub fn insert(&mut self, index: usize) {
        self.bits[index] = true;
    }

    pub fn remove(&mut self, index: usize) {
        self.bits[index] = false;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect()
    }

    pub fn is_subset(&self, other: &CellMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}
