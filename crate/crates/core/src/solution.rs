//! Result types shared by the bilevel and welfare solvers.

use serde::{Deserialize, Serialize};

use crate::milp::MilpStatus;
use crate::pricing::CostSelection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    TimeLimit,
    NodeLimit,
    IterationLimit,
    CertificateFailure,
    Error,
}

impl From<MilpStatus> for SolveStatus {
    fn from(s: MilpStatus) -> Self {
        match s {
            MilpStatus::Optimal => SolveStatus::Optimal,
            MilpStatus::Infeasible => SolveStatus::Infeasible,
            MilpStatus::NodeLimit => SolveStatus::NodeLimit,
            MilpStatus::TimeLimit => SolveStatus::TimeLimit,
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned));
        f.write_str(s.as_deref().unwrap_or("error"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub nodes: usize,
    pub time_s: f64,
    /// Big-M constant of the accepted solve, for formulations that use one.
    pub m_final: Option<f64>,
    pub m_escalations: usize,
    /// Cutting-plane or decomposition iterations.
    pub iterations: usize,
    pub best_bound: Option<f64>,
}

/// A leader/follower solution: the costs, the portfolio and what each party gets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilevelSolution {
    pub selection: CostSelection,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub profit: f64,
    pub cvar: f64,
    pub expected_return: f64,
    pub method: String,
    pub status: SolveStatus,
    pub diagnostics: Diagnostics,
}

/// Flat JSON record written per solve by the experiment harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub p: Vec<f64>,
    pub x: Vec<f64>,
    pub profit: f64,
    pub cvar: f64,
    pub expected_return: f64,
    pub status: SolveStatus,
    pub nodes: usize,
    pub time_s: f64,
    #[serde(rename = "M_final")]
    pub m_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub welfare: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cuts: Option<usize>,
}

impl BilevelSolution {
    pub fn record(&self) -> ResultRecord {
        ResultRecord {
            p: self.selection.p.clone(),
            x: self.x.clone(),
            profit: self.profit,
            cvar: self.cvar,
            expected_return: self.expected_return,
            status: self.status,
            nodes: self.diagnostics.nodes,
            time_s: self.diagnostics.time_s,
            m_final: self.diagnostics.m_final,
            xi: None,
            welfare: None,
            cuts: None,
        }
    }

    /// Broker profit plus investor CVaR.
    pub fn sum(&self) -> f64 {
        self.profit + self.cvar
    }
}
