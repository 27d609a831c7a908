//! Axis-aligned boxes used for constraint sets, zones and reachable-set bounds.

use crate::error::{Result, ZempcError};

/// Closed axis-aligned box `[lo_0, hi_0] x ... x [lo_{n-1}, hi_{n-1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl IntervalBox {
    /// Builds a box, rejecting mismatched lengths, NaN bounds, infinite bounds and `lo > hi`.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(ZempcError::Config(format!(
                "box bound lengths differ: lo has {}, hi has {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.is_empty() {
            return Err(ZempcError::Config("box must have at least one dimension".into()));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() {
                return Err(ZempcError::Config(format!("box dimension {i} is unbounded or NaN")));
            }
            if l > h {
                return Err(ZempcError::Config(format!(
                    "box dimension {i} has lo {l} > hi {h}"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// Symmetric box `[-half_widths, half_widths]`.
    pub fn symmetric(half_widths: &[f64]) -> Result<Self> {
        Self::new(half_widths.iter().map(|w| -w).collect(), half_widths.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    /// Product of the widths.
    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// True when `x` lies strictly inside every face.
    pub fn contains_interior(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v > *l && *v < *h)
    }

    pub fn contains_box(&self, other: &IntervalBox) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|i| other.lo[i] >= self.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// Componentwise projection onto the box.
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| v.clamp(*l, *h))
            .collect()
    }

    /// Per-dimension distance to the box, zero inside.
    pub fn clamp_distance(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| (l - v).max(v - h).max(0.0))
            .collect()
    }

    /// Grows every face outward by `radius[i]`.
    pub fn inflate(&self, radius: &[f64]) -> IntervalBox {
        IntervalBox {
            lo: self.lo.iter().zip(radius).map(|(l, r)| l - r).collect(),
            hi: self.hi.iter().zip(radius).map(|(h, r)| h + r).collect(),
        }
    }

    /// Smallest box containing all points. Panics on an empty iterator.
    pub fn bounding<'a, I>(points: I) -> IntervalBox
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut it = points.into_iter();
        let first = it.next().expect("bounding box of no points");
        let mut lo = first.to_vec();
        let mut hi = first.to_vec();
        for p in it {
            for (i, v) in p.iter().enumerate() {
                lo[i] = lo[i].min(*v);
                hi[i] = hi[i].max(*v);
            }
        }
        IntervalBox { lo, hi }
    }

    /// All `2^n` vertices, ordered with dimension 0 varying fastest.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|i| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] })
                    .collect()
            })
            .collect()
    }

    /// `points` evenly spaced values per axis (tensor grid); one point means the center.
    pub fn uniform_grid(&self, points: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|i| {
                if points <= 1 {
                    vec![0.5 * (self.lo[i] + self.hi[i])]
                } else {
                    let step = self.width(i) / (points - 1) as f64;
                    (0..points)
                        .map(|k| if k + 1 == points { self.hi[i] } else { self.lo[i] + step * k as f64 })
                        .collect()
                }
            })
            .collect();
        let mut out = vec![Vec::with_capacity(self.dim())];
        for axis in axes.iter().rev() {
            out = out
                .into_iter()
                .flat_map(|tail| {
                    axis.iter().map(move |v| {
                        let mut p = Vec::with_capacity(tail.len() + 1);
                        p.push(*v);
                        p.extend_from_slice(&tail);
                        p
                    })
                })
                .collect();
        }
        out
    }

    /// Largest |bound| per axis; the `theta` of a box centred at the origin.
    pub fn inf_norm_radius(&self) -> f64 {
        self.lo
            .iter()
            .chain(&self.hi)
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn intersects(&self, other: &IntervalBox) -> bool {
        (0..self.dim()).all(|i| self.lo[i] <= other.hi[i] && other.lo[i] <= self.hi[i])
    }
}

impl std::fmt::Display for IntervalBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| format!("[{l}, {h}]"))
            .collect();
        write!(f, "{}", parts.join(" x "))
    }
}
