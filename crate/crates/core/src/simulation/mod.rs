//! Closed-loop harness, disturbance identification and the benchmark.

mod benchmark;
mod harness;
mod identify;

pub use benchmark::{BenchmarkRow, BenchmarkRun, format_hms, run_benchmark, summary_csv, summary_table};
pub use harness::{
    ControllerSpec, RunStatus, SimConfig, SimTrace, TRACE_COLUMNS, TraceRow, run_closed_loop, run_with_controller,
};
pub use identify::{ProfileLibrary, RESIDUAL_FLOOR, identify_disturbance_set, reference_energy, residual_extent};
