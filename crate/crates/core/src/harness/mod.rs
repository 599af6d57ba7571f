//! Manufactured problem, error measurement and experiment drivers.

pub mod experiments;
pub mod fields;
pub mod manufactured;
pub mod verify;

pub use experiments::{
    apply_cost_by_degree, apply_cost_is_linear_in_degree, compare_local_solvers, observed_orders,
    perf_report, read_rows_csv, run_convergence_study, run_convergence_study_with, solve_manufactured,
    write_rows_csv, KernelTiming, ObservedOrder, PerfConfig, PerfReport, StudyConfig, StudyRow, StudyTable,
};
pub use fields::{assemble_rhs, divergence_norm, interpolate, l2_error, PRESSURE_SIGN};
pub use manufactured::{manufactured_fields, ManufacturedSolution};
pub use verify::{verify, Check};
