pub mod cost;
pub mod empc;
pub mod ocp;
pub mod qp;
pub mod sqp;

pub use cost::{zone_penalty, StageCost};
pub use empc::{diagnostics_csv, rotated_cost, Empc, StepDiagnostics};
pub use ocp::{
    build_ocp, stage_cost, EmpcConfig, OcpSolution, SolveStatus, SolverTolerances, TerminalMode, TranscribedProblem,
};
pub use sqp::solve_ocp;
