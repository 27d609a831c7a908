use thiserror::Error;

/// Errors raised across the zone construction, control and simulation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZempcError {
    /// The plant right-hand side or map produced a non-finite value.
    #[error("model evaluation failed at state {state:?}: {detail}")]
    ModelEvaluation { state: Vec<f64>, detail: String },

    /// Invalid user-supplied configuration (dimensions, bounds, resolutions).
    #[error("configuration error: {0}")]
    Config(String),

    /// Lipschitz or other sampled estimation could not produce a value.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// The economic zone could not be built (e.g. the invariance kernel is empty).
    #[error("zone construction error: {0}")]
    ZoneConstruction(String),

    /// A steady-state or optimal-control problem has no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A numerical solver failed to converge or broke down.
    #[error("solver failure: {0}")]
    Solver(String),

    /// Artifact parsing failure.
    #[error("artifact parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, ZempcError>;
