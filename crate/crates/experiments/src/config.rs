use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Result};
use portfolio_bilevel::market_data::InstanceClass;
use serde::{Deserialize, Serialize};

/// One solver run per matrix cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Blifp1,
    Blifp2,
    IlbfpLp,
    IlbfpCuttingPlane,
    MswpMilp,
    MswpBenders,
}

/// The three problems the methods solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Blifp,
    Ilbfp,
    Mswp,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Blifp1,
        Method::Blifp2,
        Method::IlbfpLp,
        Method::IlbfpCuttingPlane,
        Method::MswpMilp,
        Method::MswpBenders,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Blifp1 => "blifp1",
            Method::Blifp2 => "blifp2",
            Method::IlbfpLp => "ilbfp_lp",
            Method::IlbfpCuttingPlane => "ilbfp_cutting_plane",
            Method::MswpMilp => "mswp_milp",
            Method::MswpBenders => "mswp_benders",
        }
    }

    pub fn problem(self) -> Problem {
        match self {
            Method::Blifp1 | Method::Blifp2 => Problem::Blifp,
            Method::IlbfpLp | Method::IlbfpCuttingPlane => Problem::Ilbfp,
            Method::MswpMilp | Method::MswpBenders => Problem::Mswp,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        match Method::ALL.iter().find(|m| m.name() == key) {
            Some(&m) => Ok(m),
            None => bail!(
                "unknown method {s:?}; expected one of {}",
                Method::ALL.map(Method::name).join(", ")
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub classes: Vec<InstanceClass>,
    pub replicates: usize,
    pub alphas: Vec<f64>,
    pub mu0s: Vec<f64>,
    pub methods: Vec<Method>,
    /// Per-cell limit in seconds.
    pub time_limit_s: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            classes: InstanceClass::ALL.to_vec(),
            replicates: 5,
            alphas: vec![0.05, 0.1, 0.5, 0.9],
            mu0s: vec![0.0, 0.05, 0.1],
            methods: Method::ALL.to_vec(),
            time_limit_s: 3600.0,
            seed: 2024,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty()
            || self.alphas.is_empty()
            || self.mu0s.is_empty()
            || self.methods.is_empty()
        {
            bail!("classes, alphas, mu0s and methods must all be nonempty");
        }
        if self.replicates == 0 {
            bail!("replicates must be at least 1");
        }
        if !(self.time_limit_s > 0.0 && self.time_limit_s.is_finite()) {
            bail!("time limit must be positive, got {}", self.time_limit_s);
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            bail!("alpha must lie in (0, 1], got {a}");
        }
        if let Some(m) = self.mu0s.iter().find(|m| !m.is_finite()) {
            bail!("mu0 must be finite, got {m}");
        }
        Ok(())
    }

    /// Number of solver runs in the matrix.
    pub fn num_runs(&self) -> usize {
        self.classes.len()
            * self.replicates
            * self.alphas.len()
            * self.mu0s.len()
            * self.methods.len()
    }

    /// Seed of replicate `replicate` of `class`.
    pub fn instance_seed(&self, class: InstanceClass, replicate: usize) -> u64 {
        let key = (class as u64) << 32 | replicate as u64;
        (self.seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15)).rotate_left(17)
    }
}
