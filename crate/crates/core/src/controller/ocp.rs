use std::fmt;

use super::cost::StageCost;
use crate::error::{Result, ZempcError};
use crate::interval::IntervalBox;
use crate::steadystate::SteadyState;
use crate::sysmodel::{EconomicCost, PlantModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverTolerances {
    /// Largest shooting-gap or terminal residual, in model units.
    pub constraint: f64,
    /// Largest projected Lagrangian-gradient entry, in scaled variables.
    pub kkt: f64,
    pub max_iter: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self { constraint: 1e-6, kkt: 1e-5, max_iter: 50 }
    }
}

/// Settings of one EMPC instance.
#[derive(Clone)]
pub struct EmpcConfig {
    pub horizon: usize,
    pub c1: f64,
    pub c2: f64,
    /// Zone whose penalty enters the stage cost.
    pub tracked_zone: IntervalBox,
    /// Steady state the terminal constraint anchors to.
    pub terminal: SteadyState,
    pub state_box: IntervalBox,
    pub input_box: IntervalBox,
    pub economic: EconomicCost,
    pub tolerances: SolverTolerances,
    /// Weight of `|z(N) - x_s|^2` (scaled) when the terminal equality is softened.
    pub soft_terminal_weight: f64,
}

impl fmt::Debug for EmpcConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmpcConfig")
            .field("horizon", &self.horizon)
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .field("tracked_zone", &self.tracked_zone)
            .field("terminal", &self.terminal)
            .field("tolerances", &self.tolerances)
            .finish()
    }
}

impl EmpcConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        horizon: usize,
        c1: f64,
        c2: f64,
        tracked_zone: IntervalBox,
        terminal: SteadyState,
        state_box: IntervalBox,
        input_box: IntervalBox,
        economic: EconomicCost,
    ) -> Result<Self> {
        let cfg = Self {
            horizon,
            c1,
            c2,
            tracked_zone,
            terminal,
            state_box,
            input_box,
            economic,
            tolerances: SolverTolerances::default(),
            soft_terminal_weight: 1e4,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(ZempcError::Config("horizon must be at least 1".into()));
        }
        if !(self.c1 >= 0.0 && self.c2 >= 0.0) || self.c1 + self.c2 == 0.0 {
            return Err(ZempcError::Config("zone weights must be nonnegative and not both zero".into()));
        }
        if !self.state_box.contains(&self.terminal.x_s) {
            return Err(ZempcError::Config(format!(
                "terminal state {:?} lies outside the state box {}",
                self.terminal.x_s, self.state_box
            )));
        }
        if !self.input_box.contains(&self.terminal.u_s) {
            return Err(ZempcError::Config(format!("terminal input {:?} lies outside the input box", self.terminal.u_s)));
        }
        Ok(())
    }

    pub fn stage(&self) -> StageCost {
        StageCost::new(self.economic.clone(), self.tracked_zone.clone(), self.c1, self.c2)
    }
}

/// `l_e(z, v) + zone_penalty(z, tracked_zone, c1, c2)`.
pub fn stage_cost(z: &[f64], v: &[f64], config: &EmpcConfig) -> f64 {
    (config.economic)(z, v) + super::zone_penalty(z, &config.tracked_zone, config.c1, config.c2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminalMode {
    Hard,
    /// Terminal equality replaced by `weight * |(z(N) - x_s) / scale|^2`.
    Soft { weight: f64 },
}

/// Multiple-shooting transcription of the finite-horizon problem at `x_now`.
///
/// Decision vector layout: `[v(0), z(1), v(1), z(2), ..., v(N-1), z(N)]`.
pub struct TranscribedProblem<'a> {
    pub model: &'a PlantModel,
    pub config: &'a EmpcConfig,
    pub x_now: Vec<f64>,
    pub terminal: TerminalMode,
    pub cost: StageCost,
}

impl TranscribedProblem<'_> {
    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn n_vars(&self) -> usize {
        self.horizon() * (self.model.n_u + self.model.n_x)
    }

    /// Shooting gaps plus, for a hard terminal, the terminal rows.
    pub fn n_eq(&self) -> usize {
        let n = self.model.n_x;
        self.horizon() * n + if self.terminal == TerminalMode::Hard { n } else { 0 }
    }

    pub fn input_offset(&self, k: usize) -> usize {
        k * (self.model.n_u + self.model.n_x)
    }

    /// Offset of `z(k)` for `k >= 1`.
    pub fn state_offset(&self, k: usize) -> usize {
        (k - 1) * (self.model.n_u + self.model.n_x) + self.model.n_u
    }

    pub fn pack(&self, v: &[Vec<f64>], z: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_vars()];
        for k in 0..self.horizon() {
            let o = self.input_offset(k);
            out[o..o + self.model.n_u].copy_from_slice(&v[k]);
            let o = self.state_offset(k + 1);
            out[o..o + self.model.n_x].copy_from_slice(&z[k + 1]);
        }
        out
    }

    /// Inputs and states (with `z(0) = x_now`) from a decision vector.
    pub fn unpack(&self, vars: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (m, n) = (self.model.n_u, self.model.n_x);
        let v = (0..self.horizon()).map(|k| vars[self.input_offset(k)..self.input_offset(k) + m].to_vec()).collect();
        let mut z = vec![self.x_now.clone()];
        z.extend((1..=self.horizon()).map(|k| vars[self.state_offset(k)..self.state_offset(k) + n].to_vec()));
        (v, z)
    }

    pub fn objective(&self, vars: &[f64]) -> f64 {
        let (v, z) = self.unpack(vars);
        let mut total: f64 = (0..self.horizon()).map(|k| self.cost.eval(&z[k], &v[k])).sum();
        if let TerminalMode::Soft { weight } = self.terminal {
            total += weight * self.scaled_terminal_error(&z[self.horizon()]).iter().map(|e| e * e).sum::<f64>();
        }
        total
    }

    pub fn scaled_terminal_error(&self, z_n: &[f64]) -> Vec<f64> {
        (0..self.model.n_x)
            .map(|i| (z_n[i] - self.config.terminal.x_s[i]) / self.model.state_scale[i])
            .collect()
    }

    /// Equality residuals in model units: gaps `z(k+1) - f(z(k), v(k), 0)`, then `z(N) - x_s`.
    pub fn equality_residuals(&self, vars: &[f64]) -> Result<Vec<f64>> {
        let (v, z) = self.unpack(vars);
        let mut r = Vec::with_capacity(self.n_eq());
        for k in 0..self.horizon() {
            let f = self.model.step_nominal(&z[k], &v[k])?;
            r.extend(z[k + 1].iter().zip(&f).map(|(a, b)| a - b));
        }
        if self.terminal == TerminalMode::Hard {
            r.extend(z[self.horizon()].iter().zip(&self.config.terminal.x_s).map(|(a, b)| a - b));
        }
        Ok(r)
    }

    /// Variable bounds in the decision-vector layout.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![0.0; self.n_vars()];
        let mut hi = vec![0.0; self.n_vars()];
        for k in 0..self.horizon() {
            let o = self.input_offset(k);
            lo[o..o + self.model.n_u].copy_from_slice(self.config.input_box.lo());
            hi[o..o + self.model.n_u].copy_from_slice(self.config.input_box.hi());
            let o = self.state_offset(k + 1);
            lo[o..o + self.model.n_x].copy_from_slice(self.config.state_box.lo());
            hi[o..o + self.model.n_x].copy_from_slice(self.config.state_box.hi());
        }
        (lo, hi)
    }
}

pub fn build_ocp<'a>(x_now: &[f64], config: &'a EmpcConfig, model: &'a PlantModel) -> TranscribedProblem<'a> {
    TranscribedProblem {
        model,
        config,
        x_now: x_now.to_vec(),
        terminal: TerminalMode::Hard,
        cost: config.stage(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

impl SolveStatus {
    pub fn name(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub v_star: Vec<Vec<f64>>,
    /// `z_star[0]` is the measured state.
    pub z_star: Vec<Vec<f64>>,
    pub objective: f64,
    pub kkt_residual: f64,
    /// Largest equality residual in model units.
    pub constraint_residual: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub soft_terminal: bool,
    /// Shooting-gap multipliers (scaled), one vector per stage.
    pub multipliers: Vec<Vec<f64>>,
    pub terminal_multiplier: Vec<f64>,
}
