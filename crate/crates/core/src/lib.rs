//! Liveput-optimized planning and simulation for DNN training on preemptible
//! (spot) instances.
//!
//! The crate is organized bottom-up:
//!
//! - [`trace`]: availability traces, deltas, segment metrics and synthetic generators
//! - [`predictor`]: availability forecasting (ARIMA-style and simple baselines)
//! - [`perf_model`]: workload profiles, `Throughput(D, P)` and the configuration space
//! - [`preemption`]: preemption scenarios over a `D x P` topology and liveput expectations
//! - [`migration`]: intra-stage / inter-stage / pipeline migration planning and costing
//! - [`optimizer`]: per-interval committed-sample objective and the lookahead DP
//! - [`simulator`]: interval-level replay of the scheduler loop and baseline policies
//! - [`io`]: CSV / JSON file formats shared by the CLI

pub mod error;
pub mod io;
pub mod migration;
pub mod optimizer;
pub mod perf_model;
pub mod predictor;
pub mod preemption;
pub mod profiles;
pub mod simulator;
pub mod trace;

pub use error::{Error, Result};
pub use migration::{CostTable, MigrationKind, MigrationPlan};
pub use optimizer::{LiveputOptimizer, OptimizerConfig, PlanStep};
pub use perf_model::{MemoryModel, ParallelConfig, WorkloadProfile};
pub use predictor::{ForecastConfig, ForecastMethod};
pub use preemption::{PreemptionVector, ScenarioMode, Topology};
pub use simulator::{Policy, SimOptions, SimReport};
pub use trace::{EventTrace, IntervalSeries, TraceMetrics};
