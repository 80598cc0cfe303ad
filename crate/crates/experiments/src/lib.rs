//! Experiment harness: the solve matrix over instance classes and investor
//! profiles, the aggregated CSV tables, and the cross-model comparison.

pub mod compare;
pub mod config;
pub mod matrix;

pub use compare::{compare_models, dominance_holds, ComparisonRow};
pub use config::{ExperimentConfig, Method, Problem};
pub use matrix::{run_matrix, MatrixOutput, MatrixRecord};
