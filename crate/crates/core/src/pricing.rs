//! The broker's best response to a fixed portfolio.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LpProblem, Relation, Sense};
use crate::market_data::{CostStructure, ProblemInstance};
use crate::milp::{solve_milp, MilpProblem, MilpStatus, SolveLimits};

/// One grid entry per chargeable security.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSelection {
    /// Index into each security's grid.
    pub picks: Vec<usize>,
    /// Selected costs, aligned with the chargeable set.
    pub p: Vec<f64>,
    /// `sum_{j in B} p_j x_j` for the portfolio the selection was made for.
    pub profit: f64,
}

impl CostSelection {
    pub fn from_picks(costs: &CostStructure, picks: Vec<usize>) -> Self {
        let p = costs.costs_at(&picks);
        Self {
            picks,
            p,
            profit: 0.0,
        }
    }

    /// Indicator value of grid entry `k` of chargeable security `i`.
    pub fn indicator(&self, i: usize, k: usize) -> f64 {
        if self.picks[i] == k {
            1.0
        } else {
            0.0
        }
    }

    pub fn evaluated(mut self, instance: &ProblemInstance, x: &[f64]) -> Self {
        self.profit = instance.profit(x, &self.p);
        self
    }
}

/// The highest admissible cost of every chargeable security. Optimal for any
/// portfolio when no coupling rows are present; profit is left at zero.
pub fn max_cost_selection(costs: &CostStructure) -> Result<CostSelection> {
    if costs.has_polyhedron() {
        return Err(Error::InvalidInput(
            "maximal costs are only optimal without coupling rows; use solve_pricp".into(),
        ));
    }
    let picks = costs.grids().iter().map(|g| g.len() - 1).collect();
    Ok(CostSelection::from_picks(costs, picks))
}

fn pricing_limits() -> SolveLimits {
    SolveLimits {
        mip_gap: 1e-12,
        ..SolveLimits::default()
    }
}

struct PricingModel {
    milp: MilpProblem,
    /// `vars[i][k]` is the indicator of grid entry `k` for chargeable security `i`.
    vars: Vec<Vec<usize>>,
}

fn pricing_model(costs: &CostStructure, weight: &[f64]) -> PricingModel {
    let mut milp = MilpProblem::new(LpProblem::new(Sense::Maximize));
    let mut vars = Vec::with_capacity(costs.num_chargeable());
    for (i, grid) in costs.grids().iter().enumerate() {
        let group: Vec<usize> = grid
            .iter()
            .enumerate()
            .map(|(k, &c)| milp.add_binary(format!("a_{i}_{k}"), weight[i] * c))
            .collect();
        milp.lp.add_row(
            format!("pick_{i}"),
            group.iter().map(|&v| (v, 1.0)),
            Relation::Eq,
            1.0,
        );
        milp.sos1.push(group.clone());
        vars.push(group);
    }
    add_cost_rows(&mut milp.lp, costs, &vars);
    PricingModel { milp, vars }
}

/// Adds the coupling rows of `costs`, expressed in the grid indicators `vars`.
pub(crate) fn add_cost_rows(lp: &mut LpProblem, costs: &CostStructure, vars: &[Vec<usize>]) {
    for (r, row) in costs.polyhedron().iter().enumerate() {
        let terms = costs
            .grids()
            .iter()
            .zip(vars)
            .zip(&row.coefficients)
            .flat_map(|((grid, group), &a)| grid.iter().zip(group).map(move |(&c, &v)| (v, a * c)));
        lp.add_row(format!("cost_rule_{r}"), terms, row.relation, row.rhs);
    }
}

fn picks_from(vars: &[Vec<usize>], x: &[f64]) -> Vec<usize> {
    vars.iter()
        .map(|group| {
            group
                .iter()
                .enumerate()
                .max_by(|a, b| x[*a.1].total_cmp(&x[*b.1]))
                .map(|(k, _)| k)
                .expect("grids are nonempty")
        })
        .collect()
}

/// Maximizes the broker's profit `sum_{j in B} p_j x_j` over admissible cost
/// vectors. Securities the portfolio does not hold get their highest
/// admissible cost.
pub fn solve_pricp(instance: &ProblemInstance, x: &[f64]) -> Result<CostSelection> {
    let costs = &instance.costs;
    if x.len() != instance.panel.num_securities() {
        return Err(Error::DimensionMismatch(format!(
            "portfolio has {} weights for {} securities",
            x.len(),
            instance.panel.num_securities()
        )));
    }
    if !costs.has_polyhedron() {
        return Ok(max_cost_selection(costs)?.evaluated(instance, x));
    }
    let weight: Vec<f64> = costs.chargeable().iter().map(|&j| x[j]).collect();
    let model = pricing_model(costs, &weight);
    let sol = solve_milp(&model.milp, &pricing_limits())?;
    let Some(primal) = sol
        .primal
        .as_ref()
        .filter(|_| sol.status == MilpStatus::Optimal)
    else {
        return Err(Error::Infeasible(
            "no admissible cost vector satisfies the coupling rows".into(),
        ));
    };
    let mut picks = picks_from(&model.vars, primal);
    let idle: Vec<usize> = (0..weight.len()).filter(|&i| weight[i] <= 1e-12).collect();
    if !idle.is_empty() {
        // Among optimal selections, raise the costs of unheld securities.
        let mut second = pricing_model(costs, &vec![0.0; weight.len()]);
        for &i in &idle {
            for (k, &c) in costs.grids()[i].iter().enumerate() {
                second.milp.lp.objective[second.vars[i][k]] = c;
            }
        }
        let profit_terms: Vec<(usize, f64)> = costs
            .grids()
            .iter()
            .enumerate()
            .flat_map(|(i, g)| g.iter().enumerate().map(move |(k, &c)| (i, k, c)))
            .map(|(i, k, c)| (second.vars[i][k], weight[i] * c))
            .collect();
        second.milp.lp.add_row(
            "keep_profit",
            profit_terms,
            Relation::Ge,
            sol.objective - 1e-12 * sol.objective.abs().max(1.0),
        );
        let refined = solve_milp(&second.milp, &pricing_limits())?;
        if let (MilpStatus::Optimal, Some(x2)) = (refined.status, refined.primal.as_ref()) {
            picks = picks_from(&second.vars, x2);
        }
    }
    Ok(CostSelection::from_picks(costs, picks).evaluated(instance, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{sum_cap, tiny1, tiny1_extended};

    #[test]
    fn maximal_costs_of_tiny_fixture() {
        let (inst, _) = tiny1();
        assert_eq!(
            max_cost_selection(&inst.costs).unwrap().p,
            vec![0.02, 0.005]
        );
    }

    #[test]
    fn coupling_row_cuts_off_three_combinations() {
        let (inst, _) = tiny1_extended(true);
        let s = solve_pricp(&inst, &[0.5, 0.5]).unwrap();
        assert_eq!(s.p, vec![0.01, 0.005]);
        assert!((s.profit - 0.0075).abs() < 1e-15);
    }

    #[test]
    fn empty_cost_set_is_infeasible() {
        let (inst, _) = tiny1_extended(false);
        let mut inst = inst;
        inst.costs = inst
            .costs
            .clone()
            .with_polyhedron(vec![sum_cap(2, 0.0)])
            .unwrap();
        assert!(solve_pricp(&inst, &[0.5, 0.5]).unwrap_err().is_infeasible());
    }

    #[test]
    fn zero_portfolio_earns_nothing() {
        let (inst, _) = tiny1_extended(true);
        let s = solve_pricp(&inst, &[0.0, 0.0]).unwrap();
        assert_eq!(s.profit, 0.0);
        assert!(inst.costs.admits(&s.p, 1e-12));
    }

    #[test]
    fn unheld_security_gets_highest_admissible_cost() {
        let (inst, _) = tiny1_extended(false);
        let mut inst = inst;
        inst.costs = inst
            .costs
            .clone()
            .with_polyhedron(vec![sum_cap(2, 0.03)])
            .unwrap();
        // only the first security is held; the second takes the highest cost left
        let s = solve_pricp(&inst, &[1.0, 0.0]).unwrap();
        assert_eq!(s.p, vec![0.02, 0.005]);
        let t = solve_pricp(&inst, &[0.0, 1.0]).unwrap();
        assert_eq!(t.p, vec![0.01, 0.015]);
    }
}
