//! Benchmark problems with independent oracles and convergence studies.

pub mod oracles;
pub mod problems;
pub mod study;

pub use oracles::{oracle_value, oracle_values, FdSettings};
pub use problems::{BenchmarkProblem, ProblemKey, ProblemParams};
pub use study::{run_convergence_study, RateReport, RateRow, StudyTemplate};
