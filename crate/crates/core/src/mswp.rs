//! Joint welfare of broker and investor: a weighted sum of the broker's profit
//! and the investor's CVaR, maximized over cost selections and portfolios
//! together. The unweighted case is also solved by Benders decomposition, with
//! the CVaR of a fixed return vector evaluated by sorting.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::follower::inspection_weights;
use crate::leader::{add_profit_objective, leader_block, LeaderLayout};
use crate::lp::Relation;
use crate::market_data::{InvestorProfile, ProblemInstance};
use crate::milp::{solve_milp, MilpProblem, MilpSolution, MilpStatus, SolveLimits};
use crate::pricing::CostSelection;
use crate::solution::{Diagnostics, ResultRecord, SolveStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareSolution {
    pub selection: CostSelection,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub profit: f64,
    pub cvar: f64,
    pub expected_return: f64,
    /// `xi * profit + (1 - xi) * cvar`, or `profit + cvar` when unweighted.
    pub welfare: f64,
    pub xi: Option<f64>,
    pub method: String,
    pub status: SolveStatus,
    pub diagnostics: Diagnostics,
    /// Benders master values, one per master solve.
    pub master_trace: Vec<f64>,
    pub cuts: usize,
    /// Another optimal solution splits the same welfare differently.
    pub alternative_split: bool,
}

impl WelfareSolution {
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
            m_final: None,
            xi: self.xi,
            welfare: Some(self.welfare),
            cuts: Some(self.cuts),
        }
    }

    /// Broker profit plus investor CVaR.
    pub fn sum(&self) -> f64 {
        self.profit + self.cvar
    }
}

#[derive(Debug, Clone)]
pub struct WelfareOptions {
    pub milp: SolveLimits,
    /// Re-solve for the most profitable optimum to detect other splits.
    pub check_alternatives: bool,
    pub benders_tol: f64,
    pub max_cuts: usize,
    pub time_limit: Option<Duration>,
}

impl Default for WelfareOptions {
    fn default() -> Self {
        Self {
            milp: SolveLimits {
                mip_gap: 1e-9,
                ..SolveLimits::default()
            },
            check_alternatives: true,
            benders_tol: 1e-7,
            max_cuts: 500,
            time_limit: None,
        }
    }
}

fn check_xi(xi: f64) -> Result<()> {
    if (0.0..=1.0).contains(&xi) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "welfare weight must lie in [0, 1], got {xi}"
        )))
    }
}

struct Parts {
    selection: CostSelection,
    x: Vec<f64>,
    y: Vec<f64>,
    profit: f64,
    expected_return: f64,
}

fn parts(instance: &ProblemInstance, layout: &LeaderLayout, v: &[f64]) -> Parts {
    let selection = layout.selection(instance, v);
    let x = layout.portfolio(instance, v);
    let profit = instance.profit(&x, &selection.p);
    let y = v[layout.y.clone()].to_vec();
    let expected_return = y
        .iter()
        .zip(instance.panel.probabilities())
        .map(|(y, p)| y * p)
        .sum();
    Parts {
        selection: CostSelection {
            profit,
            ..selection
        },
        x,
        y,
        profit,
        expected_return,
    }
}

fn limits_until(base: &SolveLimits, deadline: Option<Instant>) -> SolveLimits {
    let mut limits = base.clone();
    if let Some(d) = deadline {
        let left = d.saturating_duration_since(Instant::now());
        limits.time_limit = Some(limits.time_limit.map_or(left, |t| t.min(left)));
    }
    limits
}

fn require_primal<'a>(sol: &'a MilpSolution, what: &str) -> Result<&'a [f64]> {
    match (&sol.primal, sol.status) {
        (Some(v), _) => Ok(v),
        (None, MilpStatus::Infeasible) => Err(Error::Infeasible(format!(
            "{what}: no cost selection admits a portfolio meeting the return target"
        ))),
        (None, status) => Err(Error::LimitReached(format!(
            "{what} stopped with {status:?} before finding a solution"
        ))),
    }
}

/// Does another optimal solution of `milp` earn the broker more than `profit`?
fn has_richer_optimum(
    milp: &MilpProblem,
    instance: &ProblemInstance,
    layout: &LeaderLayout,
    objective: f64,
    profit: f64,
    limits: &SolveLimits,
) -> Result<bool> {
    let mut alt = milp.clone();
    let terms: Vec<(usize, f64)> = alt
        .lp
        .objective
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(j, &c)| (j, c))
        .collect();
    alt.lp.add_row(
        "keep_welfare",
        terms,
        Relation::Ge,
        objective - 1e-9 * objective.abs().max(1.0),
    );
    alt.lp.objective.iter_mut().for_each(|c| *c = 0.0);
    add_profit_objective(&mut alt, instance, layout, 1.0);
    let sol = solve_milp(&alt, limits)?;
    Ok(sol.primal.is_some() && sol.objective > profit + 1e-8)
}

fn weights(xi: Option<f64>) -> (f64, f64) {
    xi.map_or((1.0, 1.0), |xi| (xi, 1.0 - xi))
}

/// The welfare MILP: weighted by `xi` when given, unweighted otherwise.
pub fn build_mswp_milp(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
    xi: Option<f64>,
) -> Result<(MilpProblem, LeaderLayout)> {
    profile.validate()?;
    if let Some(xi) = xi {
        check_xi(xi)?;
    }
    let (wp, wc) = weights(xi);
    let (mut milp, layout) = leader_block(instance, profile, true);
    add_profit_objective(&mut milp, instance, &layout, wp);
    for (c, w) in layout.cvar_expr(profile, instance.panel.probabilities()) {
        milp.lp.objective[c] += wc * w;
    }
    Ok((milp, layout))
}

/// Maximizes `xi * profit + (1 - xi) * CVaR` as one MILP.
pub fn solve_mswp_milp(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
    xi: f64,
) -> Result<WelfareSolution> {
    solve_mswp_milp_with(instance, profile, Some(xi), &WelfareOptions::default())
}

/// Maximizes `profit + CVaR` as one MILP.
pub fn solve_mswp_unweighted(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
) -> Result<WelfareSolution> {
    solve_mswp_milp_with(instance, profile, None, &WelfareOptions::default())
}

/// Weighted when `xi` is given, unweighted otherwise.
pub fn solve_mswp_milp_with(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
    xi: Option<f64>,
    options: &WelfareOptions,
) -> Result<WelfareSolution> {
    let (wp, wc) = weights(xi);
    let start = Instant::now();
    let deadline = options.time_limit.map(|t| start + t);
    let (milp, layout) = build_mswp_milp(instance, profile, xi)?;
    let cvar_terms = layout.cvar_expr(profile, instance.panel.probabilities());
    let limits = limits_until(&options.milp, deadline);
    let sol = solve_milp(&milp, &limits)?;
    let v = require_primal(&sol, "welfare MILP")?;
    let parts = parts(instance, &layout, v);
    let cvar: f64 = cvar_terms.iter().map(|&(c, w)| w * v[c]).sum();
    let status = SolveStatus::from(sol.status);
    let alternative_split = options.check_alternatives
        && status == SolveStatus::Optimal
        && wc > 0.0
        && has_richer_optimum(
            &milp,
            instance,
            &layout,
            sol.objective,
            parts.profit,
            &limits_until(&options.milp, deadline),
        )?;
    Ok(WelfareSolution {
        selection: parts.selection,
        x: parts.x,
        y: parts.y,
        profit: parts.profit,
        cvar,
        expected_return: parts.expected_return,
        welfare: wp * parts.profit + wc * cvar,
        xi,
        method: "milp".into(),
        status,
        diagnostics: Diagnostics {
            nodes: sol.nodes,
            time_s: start.elapsed().as_secs_f64(),
            best_bound: Some(sol.best_bound),
            ..Diagnostics::default()
        },
        master_trace: Vec::new(),
        cuts: 0,
        alternative_split,
    })
}

/// Unweighted welfare by Benders decomposition: the master replaces the CVaR
/// by a variable `q` bounded by cuts `q <= w . y`, where `w` are the sorting
/// weights of the CVaR at the last master returns.
pub fn solve_mswp_benders(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
) -> Result<WelfareSolution> {
    solve_mswp_benders_with(instance, profile, &WelfareOptions::default())
}

pub fn solve_mswp_benders_with(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
    options: &WelfareOptions,
) -> Result<WelfareSolution> {
    profile.validate()?;
    let start = Instant::now();
    let deadline = options.time_limit.map(|t| start + t);
    let pi = instance.panel.probabilities();
    let (mut milp, layout) = leader_block(instance, profile, false);
    add_profit_objective(&mut milp, instance, &layout, 1.0);
    let q = milp
        .lp
        .add_var("q", f64::NEG_INFINITY, instance.panel.r_max().max(0.0), 1.0);

    let mut trace = Vec::new();
    let mut nodes = 0;
    let mut best: Option<(f64, Parts, f64)> = None;
    loop {
        let sol = solve_milp(&milp, &limits_until(&options.milp, deadline))?;
        nodes += sol.nodes;
        let v = require_primal(&sol, "Benders master")?;
        trace.push(sol.objective);
        let parts = parts(instance, &layout, v);
        let (cvar, weights) = inspection_weights(&parts.y, pi, profile.alpha)?;
        let welfare = parts.profit + cvar;
        let gap = v[q] - cvar;
        if best.as_ref().is_none_or(|b| welfare > b.0) {
            best = Some((welfare, parts, cvar));
        }
        let cuts = trace.len() - 1;
        let status = if sol.status != MilpStatus::Optimal {
            Some(SolveStatus::from(sol.status))
        } else if gap <= options.benders_tol {
            Some(SolveStatus::Optimal)
        } else if cuts >= options.max_cuts {
            Some(SolveStatus::IterationLimit)
        } else if deadline.is_some_and(|d| Instant::now() >= d) {
            Some(SolveStatus::TimeLimit)
        } else {
            None
        };
        if let Some(status) = status {
            let (welfare, parts, cvar) = best.expect("set above");
            return Ok(WelfareSolution {
                selection: parts.selection,
                x: parts.x,
                y: parts.y,
                profit: parts.profit,
                cvar,
                expected_return: parts.expected_return,
                welfare,
                xi: None,
                method: "benders".into(),
                status,
                diagnostics: Diagnostics {
                    nodes,
                    time_s: start.elapsed().as_secs_f64(),
                    iterations: trace.len(),
                    best_bound: trace.last().copied(),
                    ..Diagnostics::default()
                },
                master_trace: trace,
                cuts,
                alternative_split: false,
            });
        }
        let terms =
            std::iter::once((q, 1.0)).chain(layout.y.clone().zip(&weights).map(|(c, &w)| (c, -w)));
        milp.lp
            .add_row(format!("cvar_cut_{cuts}"), terms, Relation::Le, 0.0);
    }
}

/// One weighted MILP per entry of `xis`, ordered by weight.
pub fn pareto_sweep(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
    xis: &[f64],
) -> Vec<(f64, Result<WelfareSolution>)> {
    let mut xis = xis.to_vec();
    xis.sort_by(f64::total_cmp);
    xis.into_iter()
        .map(|xi| (xi, solve_mswp_milp(instance, profile, xi)))
        .collect()
}
