//! Discrete-time uncertain plant: dynamics, fixed-step discretization and constraint sets.

mod cstr;
mod lipschitz;

use std::sync::Arc;

pub use cstr::{cstr_rhs, CstrParams};
pub use lipschitz::{estimate_lipschitz, one_step_deviation_bound, LipschitzEstimate};

use crate::error::{Result, ZempcError};
use crate::interval::IntervalBox;

/// Largest state dimension supported by the stack-allocated integrator.
pub const MAX_STATE_DIM: usize = 16;

/// `(x, u, w_dev, out)`: writes either `dx/dt` or the next state into `out`.
pub type VectorField = dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;

/// Economic stage cost `l_e(x, u)`.
pub type EconomicCost = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Dynamics {
    /// Continuous-time right-hand side, advanced with one RK4 step per sample under zero-order hold.
    Continuous(Arc<VectorField>),
    /// Discrete-time map `x+ = f(x, u, w)`.
    Discrete(Arc<VectorField>),
}

/// A plant `x(n+1) = f(x(n), u(n), w(n))` with `w` in deviation coordinates (zero is nominal).
#[derive(Clone)]
pub struct PlantModel {
    pub name: String,
    pub n_x: usize,
    pub n_u: usize,
    pub n_w: usize,
    /// Sampling period in model time units.
    pub h: f64,
    /// Named parameters, kept for audit output.
    pub params: Vec<(String, f64)>,
    pub dynamics: Dynamics,
    /// Internal solver scaling: optimisation variables are `x / state_scale`.
    pub state_scale: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub disturbance_names: Vec<String>,
}

impl std::fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlantModel")
            .field("name", &self.name)
            .field("n_x", &self.n_x)
            .field("n_u", &self.n_u)
            .field("n_w", &self.n_w)
            .field("h", &self.h)
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

impl PlantModel {
    pub fn new(name: &str, n_x: usize, n_u: usize, n_w: usize, h: f64, dynamics: Dynamics) -> Result<Self> {
        if n_x == 0 || n_x > MAX_STATE_DIM {
            return Err(ZempcError::Config(format!("state dimension {n_x} outside 1..={MAX_STATE_DIM}")));
        }
        if matches!(dynamics, Dynamics::Continuous(_)) && !(h > 0.0 && h.is_finite()) {
            return Err(ZempcError::Config(format!("step size must be positive, got {h}")));
        }
        Ok(Self {
            name: name.to_string(),
            n_x,
            n_u,
            n_w,
            h,
            params: Vec::new(),
            dynamics,
            state_scale: vec![1.0; n_x],
            input_scale: vec![1.0; n_u],
            state_names: (0..n_x).map(|i| format!("x{i}")).collect(),
            input_names: (0..n_u).map(|i| format!("u{i}")).collect(),
            disturbance_names: (0..n_w).map(|i| format!("w{i}")).collect(),
        })
    }

    /// Discrete map from a closure, for test systems and already-discretized plants.
    pub fn discrete<F>(name: &str, n_x: usize, n_u: usize, n_w: usize, map: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::new(name, n_x, n_u, n_w, 1.0, Dynamics::Discrete(Arc::new(map)))
    }

    /// Continuous right-hand side discretized with step `h`.
    pub fn continuous<F>(name: &str, n_x: usize, n_u: usize, n_w: usize, h: f64, rhs: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::new(name, n_x, n_u, n_w, h, Dynamics::Continuous(Arc::new(rhs)))
    }

    /// The CSTR benchmark: states `[C_A, T]`, input `T_c`, disturbance `[dC_Af, dT_f]`.
    pub fn cstr(params: CstrParams, h: f64) -> Result<Self> {
        let audit = params.as_named();
        let mut model = Self::continuous("cstr", 2, 1, 2, h, move |x, u, w, out| {
            let d = cstr::rhs_unchecked(&params, x, u[0], w);
            out[0] = d[0];
            out[1] = d[1];
        })?;
        model.params = audit;
        model.state_scale = vec![1.0, 100.0];
        model.input_scale = vec![100.0];
        model.state_names = vec!["C_A".into(), "T".into()];
        model.input_names = vec!["T_c".into()];
        model.disturbance_names = vec!["dC_Af".into(), "dT_f".into()];
        Ok(model)
    }

    /// One sampling period: RK4 with `u` and `w` held constant, or the discrete map.
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_x];
        self.step_into(x, u, w, &mut out)?;
        Ok(out)
    }

    pub fn step_into(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n_x;
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(out.len(), n);
        match &self.dynamics {
            Dynamics::Discrete(map) => map(x, u, w, out),
            Dynamics::Continuous(rhs) => {
                let h = self.h;
                let mut k1 = [0.0; MAX_STATE_DIM];
                let mut k2 = [0.0; MAX_STATE_DIM];
                let mut k3 = [0.0; MAX_STATE_DIM];
                let mut k4 = [0.0; MAX_STATE_DIM];
                let mut tmp = [0.0; MAX_STATE_DIM];
                rhs(x, u, w, &mut k1[..n]);
                for i in 0..n {
                    tmp[i] = x[i] + 0.5 * h * k1[i];
                }
                rhs(&tmp[..n], u, w, &mut k2[..n]);
                for i in 0..n {
                    tmp[i] = x[i] + 0.5 * h * k2[i];
                }
                rhs(&tmp[..n], u, w, &mut k3[..n]);
                for i in 0..n {
                    tmp[i] = x[i] + h * k3[i];
                }
                rhs(&tmp[..n], u, w, &mut k4[..n]);
                for i in 0..n {
                    out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ZempcError::ModelEvaluation {
                state: x.to_vec(),
                detail: format!("non-finite successor under input {u:?} and disturbance {w:?}"),
            })
        }
    }

    /// Nominal step `f(x, u, 0)`.
    pub fn step_nominal(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.step(x, u, &vec![0.0; self.n_w])
    }

    /// Continuous right-hand side; for discrete plants this is the map itself.
    pub fn rhs(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_x];
        match &self.dynamics {
            Dynamics::Continuous(f) | Dynamics::Discrete(f) => f(x, u, w, &mut out),
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(ZempcError::ModelEvaluation {
                state: x.to_vec(),
                detail: "non-finite right-hand side".into(),
            })
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.dynamics, Dynamics::Continuous(_))
    }
}

/// Operating constraints `X`, `U` and disturbance set `W` (deviation coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub state_box: IntervalBox,
    pub input_box: IntervalBox,
    pub disturbance_box: IntervalBox,
    /// Per-channel half-widths of `W`.
    pub theta_vec: Vec<f64>,
}

impl ConstraintSpec {
    pub fn new(state_box: IntervalBox, input_box: IntervalBox, disturbance_box: IntervalBox) -> Result<Self> {
        let zero = vec![0.0; disturbance_box.dim()];
        if !disturbance_box.contains_interior(&zero) {
            return Err(ZempcError::Config(
                "disturbance box must contain the nominal (zero) disturbance in its interior".into(),
            ));
        }
        let theta_vec = (0..disturbance_box.dim())
            .map(|i| disturbance_box.lo()[i].abs().max(disturbance_box.hi()[i].abs()))
            .collect();
        Ok(Self { state_box, input_box, disturbance_box, theta_vec })
    }

    /// Scalar `theta`: infinity norm of the per-channel bounds after dividing by `scaling`.
    pub fn theta(&self, scaling: Option<&[f64]>) -> f64 {
        self.theta_vec
            .iter()
            .enumerate()
            .map(|(i, t)| t / scaling.map_or(1.0, |s| s[i]))
            .fold(0.0, f64::max)
    }

    /// CSTR bounds translated to deviation coordinates around the nominal feed.
    pub fn cstr_default() -> Self {
        Self::new(
            IntervalBox::new(vec![0.0, 345.0], vec![1.0, 355.0]).unwrap(),
            IntervalBox::new(vec![285.0], vec![315.0]).unwrap(),
            IntervalBox::new(vec![-0.1, -2.0], vec![0.1, 2.0]).unwrap(),
        )
        .unwrap()
    }
}

/// CSTR target zone: full concentration range, temperature in `[348, 352]` K.
pub fn cstr_target_zone() -> IntervalBox {
    IntervalBox::new(vec![0.0, 348.0], vec![1.0, 352.0]).unwrap()
}

/// CSTR economic cost: reactant concentration.
pub fn cstr_economic_cost() -> EconomicCost {
    Arc::new(|x: &[f64], _u: &[f64]| x[0])
}
