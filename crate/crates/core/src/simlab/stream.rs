use crate::interval::IntervalBox;
use crate::sampling::UniformSampler;

/// Seeded uniform disturbances in deviation coordinates.
///
/// A stream built with `off` yields zeros. Two streams with the same seed and box
/// yield the same sequence, which is how paired runs share their realizations.
pub struct DisturbanceStream {
    seed: u64,
    bounds: IntervalBox,
    sampler: Option<UniformSampler>,
}

impl DisturbanceStream {
    pub fn new(seed: u64, bounds: IntervalBox) -> Self {
        Self { seed, sampler: Some(UniformSampler::new(seed)), bounds }
    }

    /// Zero disturbance of dimension `n_w`.
    pub fn off(n_w: usize) -> Self {
        Self { seed: 0, bounds: IntervalBox::symmetric(&vec![0.0; n_w]).expect("zero box"), sampler: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bounds(&self) -> &IntervalBox {
        &self.bounds
    }

    pub fn is_off(&self) -> bool {
        self.sampler.is_none()
    }

    pub fn next_sample(&mut self) -> Vec<f64> {
        match &mut self.sampler {
            Some(s) => s.in_box(&self.bounds),
            None => vec![0.0; self.bounds.dim()],
        }
    }
}

impl Iterator for DisturbanceStream {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        Some(self.next_sample())
    }
}
