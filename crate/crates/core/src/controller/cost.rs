use std::fmt;

use crate::interval::IntervalBox;
use crate::sysmodel::EconomicCost;

/// Minimum over `z' in zone` of `c1 |z - z'|_1 + c2 |z - z'|_2^2`.
///
/// The projection onto the box minimises both norms at once, so the minimum is
/// reached at the clamp of `z` and needs no slack variables.
pub fn zone_penalty(z: &[f64], zone: &IntervalBox, c1: f64, c2: f64) -> f64 {
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (i, v) in z.iter().enumerate() {
        let d = (zone.lo()[i] - v).max(v - zone.hi()[i]).max(0.0);
        l1 += d;
        l2 += d * d;
    }
    c1 * l1 + c2 * l2
}

/// Economic cost plus the zone-tracking penalty.
#[derive(Clone)]
pub struct StageCost {
    pub economic: EconomicCost,
    pub zone: IntervalBox,
    pub c1: f64,
    pub c2: f64,
}

impl StageCost {
    pub fn new(economic: EconomicCost, zone: IntervalBox, c1: f64, c2: f64) -> Self {
        Self { economic, zone, c1, c2 }
    }

    pub fn eval(&self, z: &[f64], v: &[f64]) -> f64 {
        (self.economic)(z, v) + self.penalty(z)
    }

    pub fn economic(&self, z: &[f64], v: &[f64]) -> f64 {
        (self.economic)(z, v)
    }

    pub fn penalty(&self, z: &[f64]) -> f64 {
        zone_penalty(z, &self.zone, self.c1, self.c2)
    }
}

impl fmt::Debug for StageCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StageCost").field("zone", &self.zone).field("c1", &self.c1).field("c2", &self.c2).finish()
    }
}
