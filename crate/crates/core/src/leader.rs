//! Building blocks shared by the single-level MILP models: cost-selection
//! binaries, linearized portfolio-cost products, and the investor's
//! CVaR constraints written in those variables.

use std::ops::Range;

use crate::lp::{LpProblem, Relation, Sense};
use crate::market_data::{InvestorProfile, ProblemInstance};
use crate::milp::MilpProblem;
use crate::pricing::{add_cost_rows, CostSelection};

/// Variable and row positions of a leader block.
#[derive(Debug, Clone)]
pub struct LeaderLayout {
    /// `a[i][k]`: grid entry `k` chosen for chargeable security `i`.
    pub a: Vec<Vec<usize>>,
    /// `a_hat[i][k]`: holding of chargeable security `i` priced at entry `k`.
    pub a_hat: Vec<Vec<usize>>,
    /// `(security, column)` for securities without a cost.
    pub x_free: Vec<(usize, usize)>,
    pub y: Range<usize>,
    /// Present when the block carries the CVaR variables.
    pub eta: Option<usize>,
    pub d: Range<usize>,
    pub scenario_rows: Range<usize>,
}

impl LeaderLayout {
    /// Portfolio weights recovered from a solution vector.
    pub fn portfolio(&self, instance: &ProblemInstance, v: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; instance.panel.num_securities()];
        for (i, &j) in instance.costs.chargeable().iter().enumerate() {
            x[j] = self.a_hat[i].iter().map(|&c| v[c]).sum::<f64>().max(0.0);
        }
        for &(j, c) in &self.x_free {
            x[j] = v[c].max(0.0);
        }
        x
    }

    /// The grid entry with the largest indicator in each group.
    pub fn selection(&self, instance: &ProblemInstance, v: &[f64]) -> CostSelection {
        let picks = self
            .a
            .iter()
            .map(|group| {
                let mut best = 0;
                for (k, &c) in group.iter().enumerate() {
                    if v[c] > v[group[best]] + 1e-9 {
                        best = k;
                    }
                }
                best
            })
            .collect();
        CostSelection::from_picks(&instance.costs, picks)
    }

    pub fn cvar_expr(&self, profile: &InvestorProfile, pi: &[f64]) -> Vec<(usize, f64)> {
        let eta = self.eta.expect("block built with CVaR variables");
        std::iter::once((eta, 1.0))
            .chain(self.d.clone().zip(pi).map(|(c, p)| (c, -p / profile.alpha)))
            .collect()
    }
}

/// Cost-selection binaries with one-hot rows and coupling rows, the
/// linearized holdings `a_hat <= a`, net scenario returns, the expected-return
/// and budget rows and, when `with_cvar`, the CVaR shortfall rows. The
/// objective is left at zero.
pub fn leader_block(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
    with_cvar: bool,
) -> (MilpProblem, LeaderLayout) {
    let panel = &instance.panel;
    let costs = &instance.costs;
    let t_count = panel.num_scenarios();
    let pi = panel.probabilities();
    let mut milp = MilpProblem::new(LpProblem::new(Sense::Maximize));

    let mut a = Vec::with_capacity(costs.num_chargeable());
    for (i, grid) in costs.grids().iter().enumerate() {
        let group: Vec<usize> = (0..grid.len())
            .map(|k| milp.add_binary(format!("a_{i}_{k}"), 0.0))
            .collect();
        milp.sos1.push(group.clone());
        a.push(group);
    }
    let lp = &mut milp.lp;
    let a_hat: Vec<Vec<usize>> = costs
        .grids()
        .iter()
        .enumerate()
        .map(|(i, grid)| {
            (0..grid.len())
                .map(|k| lp.add_var(format!("ahat_{i}_{k}"), 0.0, f64::INFINITY, 0.0))
                .collect()
        })
        .collect();
    let x_free: Vec<(usize, usize)> = instance
        .free_securities()
        .into_iter()
        .map(|j| {
            (
                j,
                lp.add_var(format!("x_{}", panel.names()[j]), 0.0, f64::INFINITY, 0.0),
            )
        })
        .collect();
    let y0 = lp.num_vars();
    for t in 0..t_count {
        lp.add_var(format!("y_{t}"), f64::NEG_INFINITY, f64::INFINITY, 0.0);
    }
    let (eta, d) = if with_cvar {
        let eta = lp.add_var("eta", f64::NEG_INFINITY, f64::INFINITY, 0.0);
        let d0 = lp.num_vars();
        for t in 0..t_count {
            lp.add_var(format!("d_{t}"), 0.0, f64::INFINITY, 0.0);
        }
        (Some(eta), d0..d0 + t_count)
    } else {
        (None, 0..0)
    };

    for (i, group) in a.iter().enumerate() {
        lp.add_row(
            format!("pick_{i}"),
            group.iter().map(|&v| (v, 1.0)),
            Relation::Eq,
            1.0,
        );
    }
    add_cost_rows(lp, costs, &a);

    let s0 = lp.num_rows();
    for t in 0..t_count {
        let mut terms = vec![(y0 + t, 1.0)];
        for ((&j, grid), group) in costs.chargeable().iter().zip(costs.grids()).zip(&a_hat) {
            terms.extend(
                grid.iter()
                    .zip(group)
                    .map(|(&c, &v)| (v, -(panel.r(j, t) - c))),
            );
        }
        terms.extend(x_free.iter().map(|&(j, v)| (v, -panel.r(j, t))));
        lp.add_row(format!("scenario_{t}"), terms, Relation::Eq, 0.0);
    }
    lp.add_row(
        "expected_return",
        (0..t_count).map(|t| (y0 + t, pi[t])),
        Relation::Ge,
        profile.mu0,
    );
    if let Some(eta) = eta {
        for t in 0..t_count {
            lp.add_row(
                format!("shortfall_{t}"),
                [(d.start + t, 1.0), (eta, -1.0), (y0 + t, 1.0)],
                Relation::Ge,
                0.0,
            );
        }
    }
    let budget = a_hat
        .iter()
        .flatten()
        .map(|&v| (v, 1.0))
        .chain(x_free.iter().map(|&(_, v)| (v, 1.0)));
    lp.add_row("budget", budget, Relation::Le, 1.0);
    for (i, (ga, gh)) in a.iter().zip(&a_hat).enumerate() {
        for (k, (&va, &vh)) in ga.iter().zip(gh).enumerate() {
            lp.add_row(
                format!("hold_{i}_{k}"),
                [(vh, 1.0), (va, -1.0)],
                Relation::Le,
                0.0,
            );
        }
    }

    let layout = LeaderLayout {
        a,
        a_hat,
        x_free,
        y: y0..y0 + t_count,
        eta,
        d,
        scenario_rows: s0..s0 + t_count,
    };
    (milp, layout)
}

/// Sets the objective to the broker profit `sum c_jk a_hat_jk` scaled by `weight`.
pub fn add_profit_objective(
    milp: &mut MilpProblem,
    instance: &ProblemInstance,
    layout: &LeaderLayout,
    weight: f64,
) {
    for (grid, group) in instance.costs.grids().iter().zip(&layout.a_hat) {
        for (&c, &v) in grid.iter().zip(group) {
            milp.lp.objective[v] += weight * c;
        }
    }
}
