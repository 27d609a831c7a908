use std::fmt::Write as _;

use log::{debug, warn};

use super::ocp::{build_ocp, EmpcConfig, OcpSolution, SolveStatus, TerminalMode};
use super::sqp::solve_ocp;
use crate::error::{Result, ZempcError};
use crate::steadystate::SteadyState;
use crate::sysmodel::{EconomicCost, PlantModel};

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub kkt_residual: f64,
    pub constraint_residual: f64,
    /// The terminal equality had to be replaced by its penalty.
    pub soft_terminal: bool,
    /// The warm-started solve failed and a cold start was used.
    pub cold_retry: bool,
    pub applied: Vec<f64>,
}

impl StepDiagnostics {
    /// True when the step did not end at an accepted hard-terminal optimum.
    pub fn flagged(&self) -> bool {
        self.status != SolveStatus::Optimal || self.soft_terminal
    }
}

/// Receding-horizon controller owning its warm-start state.
pub struct Empc {
    pub model: PlantModel,
    pub config: EmpcConfig,
    warm: Option<OcpSolution>,
    steps: usize,
}

impl Empc {
    pub fn new(model: PlantModel, config: EmpcConfig) -> Result<Self> {
        config.validate()?;
        if config.state_box.dim() != model.n_x || config.input_box.dim() != model.n_u {
            return Err(ZempcError::Config("controller boxes do not match the model dimensions".into()));
        }
        Ok(Self { model, config, warm: None, steps: 0 })
    }

    /// Forgets the stored solution; the next step starts cold.
    pub fn reset(&mut self) {
        self.warm = None;
        self.steps = 0;
    }

    pub fn last_solution(&self) -> Option<&OcpSolution> {
        self.warm.as_ref()
    }

    /// Solves the OCP at `x_now` and returns `v*(0)`.
    ///
    /// Order of attempts: hard terminal from the warm start, hard terminal cold,
    /// then the penalized terminal. Only an infeasible outcome escalates; a
    /// `max_iter` result is applied and flagged.
    pub fn control_step(&mut self, x_now: &[f64]) -> Result<(Vec<f64>, StepDiagnostics)> {
        if x_now.len() != self.model.n_x {
            return Err(ZempcError::Config(format!("state has {} entries, model expects {}", x_now.len(), self.model.n_x)));
        }
        let mut problem = build_ocp(x_now, &self.config, &self.model);
        let mut sol = solve_ocp(&problem, self.warm.as_ref())?;
        let mut cold_retry = false;
        if sol.status != SolveStatus::Optimal && self.warm.is_some() {
            let cold = solve_ocp(&problem, None)?;
            cold_retry = true;
            if cold.status == SolveStatus::Optimal || sol.status == SolveStatus::Infeasible {
                sol = cold;
            }
        }
        if sol.status == SolveStatus::Infeasible {
            warn!("step {}: terminal equality infeasible at {x_now:?}; retrying with penalized terminal", self.steps);
            problem.terminal = TerminalMode::Soft { weight: self.config.soft_terminal_weight };
            sol = solve_ocp(&problem, self.warm.as_ref())?;
            if sol.status == SolveStatus::Infeasible {
                return Err(ZempcError::Infeasible(format!(
                    "step {}: no feasible input sequence from {x_now:?}",
                    self.steps
                )));
            }
        }
        if sol.status == SolveStatus::MaxIter {
            warn!(
                "step {}: solver stopped at max_iter (kkt {:.2e}, constraint {:.2e})",
                self.steps, sol.kkt_residual, sol.constraint_residual
            );
        }
        debug!("step {}: {} in {} iterations, V={:.8}", self.steps, sol.status.name(), sol.iterations, sol.objective);
        let applied = sol.v_star[0].clone();
        let diag = StepDiagnostics {
            step: self.steps,
            status: sol.status,
            iterations: sol.iterations,
            objective: sol.objective,
            kkt_residual: sol.kkt_residual,
            constraint_residual: sol.constraint_residual,
            soft_terminal: sol.soft_terminal,
            cold_retry,
            applied: applied.clone(),
        };
        self.warm = Some(sol);
        self.steps += 1;
        Ok((applied, diag))
    }
}

/// `l_e(z, v) - l_e(x_s, u_s) + lambda(z) - lambda(f(z, v, 0))`.
pub fn rotated_cost(
    z: &[f64],
    v: &[f64],
    lambda: &dyn Fn(&[f64]) -> f64,
    model: &PlantModel,
    terminal: &SteadyState,
    economic: &EconomicCost,
) -> Result<f64> {
    let next = model.step_nominal(z, v)?;
    Ok(economic(z, v) - economic(&terminal.x_s, &terminal.u_s) + lambda(z) - lambda(&next))
}

/// One row per step: index, status, iterations, objective, KKT residual, applied input.
pub fn diagnostics_csv(rows: &[StepDiagnostics], input_names: &[String]) -> String {
    let mut out = String::from("step,status,iterations,objective,kkt_residual,constraint_residual,soft_terminal");
    for name in input_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{:.16e},{:.16e},{:.16e},{}",
            r.step,
            r.status.name(),
            r.iterations,
            r.objective,
            r.kkt_residual,
            r.constraint_residual,
            u8::from(r.soft_terminal)
        );
        for u in &r.applied {
            let _ = write!(out, ",{u:.16e}");
        }
        out.push('\n');
    }
    out
}
