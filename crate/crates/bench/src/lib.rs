//! Monte-Carlo harness for the robust MM filter: scenario construction,
//! seeded paired runs, RMSE and timing aggregation, and CSV output.
//!
//! ```no_run
//! use mmfilter_bench::{build_exp1, run_experiment};
//!
//! let mut spec = build_exp1();
//! spec.n_runs = 4;
//! let report = run_experiment(&spec, 2).unwrap();
//! for f in &report.filters {
//!     println!("{} {:.3}", f.label, f.groups[0].mean);
//! }
//! ```

pub mod error;
pub mod metrics;
pub mod output;
pub mod runner;
pub mod spec;
pub mod truth;

pub use error::{BenchError, Result};
pub use runner::{run_experiment, FilterRun, FilterSummary, GroupStats, Report, RunResult};
pub use spec::{build_exp1, build_exp2, ExperimentSpec, FilterKind, FilterSpec, RmseGroup, Scenario};
