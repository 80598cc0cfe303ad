//! The investor's CVaR portfolio problem for fixed costs, its dual, and CVaR
//! evaluation of a fixed return vector by sorting.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpProblem, LpSolution, LpStatus, Relation, Sense, SolverTolerances};
use crate::market_data::{CostStructure, InvestorProfile, ScenarioPanel};

/// Column and row positions of the CVaR portfolio LP.
#[derive(Debug, Clone)]
pub struct CvarLayout {
    pub x: Range<usize>,
    pub y: Range<usize>,
    pub eta: usize,
    pub d: Range<usize>,
    /// Rows `y_t - sum_j (r_jt - c_j) x_j = 0`.
    pub scenario_rows: Range<usize>,
    pub return_row: usize,
    /// Rows `d_t - eta + y_t >= 0`.
    pub shortfall_rows: Range<usize>,
    pub budget_row: usize,
}

/// CVaR LP where security `j` carries the unit cost `cost[j]` (zero for
/// uncharged securities).
pub fn cvar_lp_with_costs(
    panel: &ScenarioPanel,
    profile: &InvestorProfile,
    cost: &[f64],
) -> Result<(LpProblem, CvarLayout)> {
    profile.validate()?;
    let n = panel.num_securities();
    let t_count = panel.num_scenarios();
    if cost.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} costs for {n} securities",
            cost.len()
        )));
    }
    let pi = panel.probabilities();
    let mut lp = LpProblem::new(Sense::Maximize);
    let x0 = lp.num_vars();
    for name in panel.names() {
        lp.add_var(format!("x_{name}"), 0.0, f64::INFINITY, 0.0);
    }
    let y0 = lp.num_vars();
    for t in 0..t_count {
        lp.add_var(format!("y_{t}"), f64::NEG_INFINITY, f64::INFINITY, 0.0);
    }
    let eta = lp.add_var("eta", f64::NEG_INFINITY, f64::INFINITY, 1.0);
    let d0 = lp.num_vars();
    for t in 0..t_count {
        lp.add_var(format!("d_{t}"), 0.0, f64::INFINITY, -pi[t] / profile.alpha);
    }
    let s0 = lp.num_rows();
    for t in 0..t_count {
        let terms = std::iter::once((y0 + t, 1.0))
            .chain((0..n).map(|j| (x0 + j, -(panel.r(j, t) - cost[j]))));
        lp.add_row(format!("scenario_{t}"), terms, Relation::Eq, 0.0);
    }
    let return_row = lp.add_row(
        "expected_return",
        (0..t_count).map(|t| (y0 + t, pi[t])),
        Relation::Ge,
        profile.mu0,
    );
    let f0 = lp.num_rows();
    for t in 0..t_count {
        lp.add_row(
            format!("shortfall_{t}"),
            [(d0 + t, 1.0), (eta, -1.0), (y0 + t, 1.0)],
            Relation::Ge,
            0.0,
        );
    }
    let budget_row = lp.add_row("budget", (0..n).map(|j| (x0 + j, 1.0)), Relation::Le, 1.0);
    let layout = CvarLayout {
        x: x0..x0 + n,
        y: y0..y0 + t_count,
        eta,
        d: d0..d0 + t_count,
        scenario_rows: s0..s0 + t_count,
        return_row,
        shortfall_rows: f0..f0 + t_count,
        budget_row,
    };
    Ok((lp, layout))
}

fn per_security(panel: &ScenarioPanel, costs: &CostStructure, p: &[f64]) -> Result<Vec<f64>> {
    if p.len() != costs.num_chargeable() {
        return Err(Error::DimensionMismatch(format!(
            "cost vector has {} entries for {} chargeable securities",
            p.len(),
            costs.num_chargeable()
        )));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput(
            "costs must be finite and nonnegative".into(),
        ));
    }
    let mut c = vec![0.0; panel.num_securities()];
    for (&j, &v) in costs.chargeable().iter().zip(p) {
        c[j] = v;
    }
    Ok(c)
}

/// The investor's LP for the cost vector `p` over the chargeable set.
pub fn build_cvar_lp(
    panel: &ScenarioPanel,
    profile: &InvestorProfile,
    costs: &CostStructure,
    p: &[f64],
) -> Result<(LpProblem, CvarLayout)> {
    cvar_lp_with_costs(panel, profile, &per_security(panel, costs, p)?)
}

/// Dual multipliers of the investor LP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    /// Budget multiplier, `>= 0`.
    pub beta: f64,
    /// Expected-return multiplier, `<= 0`.
    pub mu: f64,
    /// Shortfall multipliers, in `[-pi_t / alpha, 0]`.
    pub gamma: Vec<f64>,
    /// Scenario-definition multipliers, `>= 0` at optimality.
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerSolution {
    pub x: Vec<f64>,
    pub eta: f64,
    pub d: Vec<f64>,
    pub y: Vec<f64>,
    pub cvar: f64,
    pub expected_return: f64,
    pub dual: DualSolution,
}

/// Reads the portfolio and the dual multipliers off an optimal investor LP.
pub fn follower_from_lp(
    panel: &ScenarioPanel,
    layout: &CvarLayout,
    sol: &LpSolution,
) -> FollowerSolution {
    let y = sol.primal[layout.y.clone()].to_vec();
    let expected_return = y
        .iter()
        .zip(panel.probabilities())
        .map(|(y, p)| y * p)
        .sum();
    FollowerSolution {
        x: sol.primal[layout.x.clone()].to_vec(),
        eta: sol.primal[layout.eta],
        d: sol.primal[layout.d.clone()].to_vec(),
        y,
        cvar: sol.objective,
        expected_return,
        dual: DualSolution {
            beta: sol.duals[layout.budget_row],
            mu: sol.duals[layout.return_row],
            gamma: sol.duals[layout.shortfall_rows.clone()].to_vec(),
            delta: sol.duals[layout.scenario_rows.clone()].to_vec(),
        },
    }
}

pub(crate) fn solved(lp: &LpProblem, what: &str) -> Result<LpSolution> {
    let sol = solve_lp(lp, &SolverTolerances::default())?;
    match sol.status {
        LpStatus::Optimal => Ok(sol),
        LpStatus::Infeasible => Err(Error::Infeasible(format!("{what} has no feasible point"))),
        LpStatus::Unbounded => Err(Error::Unbounded(format!("{what} is unbounded"))),
        LpStatus::IterationLimit => Err(Error::LimitReached(format!("{what} hit the pivot limit"))),
    }
}

/// Optimal portfolio of the investor facing costs `p`.
pub fn solve_follower(
    panel: &ScenarioPanel,
    profile: &InvestorProfile,
    costs: &CostStructure,
    p: &[f64],
) -> Result<FollowerSolution> {
    let (lp, layout) = build_cvar_lp(panel, profile, costs, p)?;
    let sol = solved(&lp, "the investor problem")?;
    Ok(follower_from_lp(panel, &layout, &sol))
}

/// Like [`solve_follower`] but with an explicit per-security cost vector.
pub fn solve_follower_with_costs(
    panel: &ScenarioPanel,
    profile: &InvestorProfile,
    cost: &[f64],
) -> Result<FollowerSolution> {
    let (lp, layout) = cvar_lp_with_costs(panel, profile, cost)?;
    let sol = solved(&lp, "the investor problem")?;
    Ok(follower_from_lp(panel, &layout, &sol))
}

/// Column positions of the dual LP.
#[derive(Debug, Clone)]
pub struct DualLayout {
    pub beta: usize,
    pub mu: usize,
    pub gamma: Range<usize>,
    pub delta: Range<usize>,
}

/// The dual of the investor LP: minimize `beta + mu0 * mu`.
pub fn build_dual1(
    panel: &ScenarioPanel,
    profile: &InvestorProfile,
    costs: &CostStructure,
    p: &[f64],
) -> Result<(LpProblem, DualLayout)> {
    profile.validate()?;
    let cost = per_security(panel, costs, p)?;
    let t_count = panel.num_scenarios();
    let pi = panel.probabilities();
    let mut lp = LpProblem::new(Sense::Minimize);
    let beta = lp.add_var("beta", 0.0, f64::INFINITY, 1.0);
    let mu = lp.add_var("mu", f64::NEG_INFINITY, 0.0, profile.mu0);
    let g0 = lp.num_vars();
    for t in 0..t_count {
        lp.add_var(format!("gamma_{t}"), f64::NEG_INFINITY, 0.0, 0.0);
    }
    let d0 = lp.num_vars();
    for t in 0..t_count {
        lp.add_var(format!("delta_{t}"), f64::NEG_INFINITY, f64::INFINITY, 0.0);
    }
    let charged: Vec<bool> = {
        let mut v = vec![false; panel.num_securities()];
        for &j in costs.chargeable() {
            v[j] = true;
        }
        v
    };
    for pass in [true, false] {
        for j in (0..panel.num_securities()).filter(|&j| charged[j] == pass) {
            let terms = std::iter::once((beta, 1.0))
                .chain((0..t_count).map(|t| (d0 + t, -(panel.r(j, t) - cost[j]))));
            lp.add_row(
                format!("asset_{}", panel.names()[j]),
                terms,
                Relation::Ge,
                0.0,
            );
        }
    }
    lp.add_row(
        "weights",
        (0..t_count).map(|t| (g0 + t, -1.0)),
        Relation::Eq,
        1.0,
    );
    for t in 0..t_count {
        lp.add_row(
            format!("weight_cap_{t}"),
            [(g0 + t, 1.0)],
            Relation::Ge,
            -pi[t] / profile.alpha,
        );
    }
    for t in 0..t_count {
        lp.add_row(
            format!("link_{t}"),
            [(g0 + t, 1.0), (d0 + t, 1.0), (mu, pi[t])],
            Relation::Eq,
            0.0,
        );
    }
    let layout = DualLayout {
        beta,
        mu,
        gamma: g0..g0 + t_count,
        delta: d0..d0 + t_count,
    };
    Ok((lp, layout))
}

/// `|primal optimum - dual optimum|`, each solved independently.
pub fn verify_strong_duality(
    panel: &ScenarioPanel,
    profile: &InvestorProfile,
    costs: &CostStructure,
    p: &[f64],
) -> Result<f64> {
    let primal = solve_follower(panel, profile, costs, p)?;
    let (dual_lp, _) = build_dual1(panel, profile, costs, p)?;
    let dual = solved(&dual_lp, "the dual investor problem")?;
    Ok((primal.cvar - dual.objective).abs())
}

/// CVaR of the scenario values `y` at level `alpha`, together with the
/// scenario weights (`-gamma_t`) attaining it. Scenarios are taken from the
/// worst upwards, each with weight `min(pi_t / alpha, remaining mass)`; ties
/// go to the lower scenario index.
pub fn inspection_weights(y: &[f64], pi: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    if y.len() != pi.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for {} probabilities",
            y.len(),
            pi.len()
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("no scenarios".into()));
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut weights = vec![0.0; y.len()];
    let mut remaining = 1.0f64;
    let mut value = 0.0;
    for (k, &t) in order.iter().enumerate() {
        if remaining <= 0.0 {
            break;
        }
        let last = k + 1 == order.len();
        let w = if last {
            remaining
        } else {
            (pi[t] / alpha).min(remaining)
        };
        weights[t] = w;
        value += w * y[t];
        remaining -= w;
    }
    Ok((value, weights))
}

/// CVaR (average of the worst `alpha` probability mass) of `y`.
pub fn cvar_by_inspection(y: &[f64], pi: &[f64], alpha: f64) -> Result<f64> {
    inspection_weights(y, pi, alpha).map(|(v, _)| v)
}

/// The scenario-weight LP whose optimum is the CVaR of `y`:
/// minimize `sum -gamma_t y_t` over `-sum gamma = 1`, `-pi_t/alpha <= gamma_t <= 0`.
pub fn build_cvar_weight_lp(y: &[f64], pi: &[f64], alpha: f64) -> LpProblem {
    let mut lp = LpProblem::new(Sense::Minimize);
    for (t, (&yt, &p)) in y.iter().zip(pi).enumerate() {
        lp.add_var(format!("gamma_{t}"), -p / alpha, 0.0, -yt);
    }
    lp.add_row("mass", (0..y.len()).map(|t| (t, -1.0)), Relation::Eq, 1.0);
    lp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::tiny1;

    #[test]
    fn inspection_examples() {
        assert!((cvar_by_inspection(&[0.1, 0.1], &[0.5, 0.5], 0.5).unwrap() - 0.1).abs() < 1e-15);
        let third = 1.0 / 3.0;
        let v = cvar_by_inspection(&[-0.2, 0.0, 0.3], &[third; 3], 0.5).unwrap();
        assert!((v - (2.0 / 3.0) * -0.2).abs() < 1e-15);
        let mean = cvar_by_inspection(&[0.3, -0.1, 0.4], &[0.2, 0.5, 0.3], 1.0).unwrap();
        assert!((mean - (0.06 - 0.05 + 0.12)).abs() < 1e-15);
    }

    #[test]
    fn tiny_follower() {
        let (inst, profile) = tiny1();
        let s = solve_follower(&inst.panel, &profile, &inst.costs, &[0.01, 0.005]).unwrap();
        assert!((s.cvar - 0.015).abs() < 1e-9);
        assert!(s.x[0].abs() < 1e-9 && (s.x[1] - 1.0).abs() < 1e-9);
        assert!(
            verify_strong_duality(&inst.panel, &profile, &inst.costs, &[0.01, 0.005]).unwrap()
                < 1e-7
        );
        let (dual, _) = build_dual1(&inst.panel, &profile, &inst.costs, &[0.01, 0.005]).unwrap();
        let d = solve_lp(&dual, &SolverTolerances::default()).unwrap();
        assert!((d.objective - 0.015).abs() < 1e-9);
    }

    #[test]
    fn unattainable_return_is_infeasible() {
        let (inst, _) = tiny1();
        let profile = InvestorProfile::new(0.5, 1.0).unwrap();
        let err = solve_follower(&inst.panel, &profile, &inst.costs, &[0.01, 0.005]).unwrap_err();
        assert!(err.is_infeasible());
        assert!(verify_strong_duality(&inst.panel, &profile, &inst.costs, &[0.01, 0.005]).is_err());
    }

    #[test]
    fn lp_duals_satisfy_the_dual_constraints() {
        let (inst, profile) = tiny1();
        let s = solve_follower(&inst.panel, &profile, &inst.costs, &[0.02, 0.005]).unwrap();
        let dual = &s.dual;
        let pi = inst.panel.probabilities();
        assert!(dual.beta >= -1e-9 && dual.mu <= 1e-9);
        assert!((-dual.gamma.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for t in 0..2 {
            assert!(dual.gamma[t] >= -pi[t] / profile.alpha - 1e-9 && dual.gamma[t] <= 1e-9);
            assert!((dual.gamma[t] + dual.delta[t] + pi[t] * dual.mu).abs() < 1e-9);
            assert!(dual.delta[t] >= -1e-9);
        }
        assert!((dual.beta + profile.mu0 * dual.mu - s.cvar).abs() < 1e-9);
    }
}
