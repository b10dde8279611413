//! Synthetic nanotube-like benchmark problems for the `mfsparse` kernels:
//! problem generation, timing reports, structural statistics and an oracle
//! based verification suite.

pub mod checks;
pub mod config;
pub mod generate;
pub mod run;
pub mod stats;
pub mod verify;

pub use config::{BenchConfig, Kernel};
pub use generate::{generate_problem, GeneratedProblem};
pub use run::{run_benchmark, BenchReport};
pub use stats::{structural_stats, StructuralStats};
pub use verify::{verify, VerifySummary};
