pub mod blifp;
pub mod error;
pub mod fixtures;
pub mod follower;
pub mod ilbfp;
pub mod leader;
pub mod lp;
pub mod market_data;
pub mod milp;
pub mod mswp;
pub mod pricing;
pub mod solution;

pub use error::{Error, Result};
