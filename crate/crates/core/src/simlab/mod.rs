//! Closed-loop experiments: seeded disturbances, rollouts, the `l_avg` metric,
//! risk sweeps, paired controller comparisons, the empirical monitors and the
//! brute-force oracles behind the validation suite.

pub mod experiments;
pub mod oracles;
pub mod record;
pub mod stream;

pub use experiments::{
    compare_controllers, risk_sweep, sweep_csv, validate_deviation_bound, Comparison, ComparisonRow, ControllerKind,
    ControllerPlan, DeviationReport, Experiment, RunSummary, SweepRow,
};
pub use oracles::{penalty_oracle, scalar_kernel_oracle, KernelOracleReport, PenaltyOracleReport};
pub use record::{
    monitor_zone_behavior, run_closed_loop, trajectory_csv, ClosedLoopRecord, MonitorReport, Scoring, ZoneRegion,
};
pub use stream::DisturbanceStream;
