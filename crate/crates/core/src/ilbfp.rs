//! Investor as leader, broker as follower.
//!
//! The investor's net return in every scenario is its gross return minus the
//! broker's profit, and the broker maximizes that profit. Writing the profit as
//! a variable `lambda` bounded below by `p . x` for every admissible cost
//! vector `p` turns the problem into one LP. [`solve_ilbfp_cutting_plane`]
//! generates those rows on demand through the broker's best response.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::blifp::DEFAULT_ENUMERATION_CAP;
use crate::error::{Error, Result};
use crate::follower::{solve_follower, solved};
use crate::lp::{solve_lp, LpProblem, LpStatus, Relation, Sense, SolverTolerances};
use crate::market_data::{InvestorProfile, ProblemInstance};
use crate::pricing::{max_cost_selection, solve_pricp, CostSelection};
use crate::solution::{BilevelSolution, Diagnostics, SolveStatus};

/// Cost vectors found by the cutting-plane loop and its per-iteration values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CutPool {
    /// Distinct broker responses, in the order they were added.
    pub cuts: Vec<Vec<f64>>,
    /// Master solves performed.
    pub iterations: usize,
    /// Master CVaR after each solve.
    pub cvar_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CuttingPlaneLimits {
    /// Stop once the broker's best response earns at most `lambda + cut_tol`.
    pub cut_tol: f64,
    /// Defaults to `10 * |grid product|`, at most 10^4.
    pub max_iterations: Option<usize>,
    pub time_limit: Option<Duration>,
}

impl Default for CuttingPlaneLimits {
    fn default() -> Self {
        Self {
            cut_tol: 1e-8,
            max_iterations: None,
            time_limit: None,
        }
    }
}

struct Master {
    lp: LpProblem,
    x: std::ops::Range<usize>,
    y: std::ops::Range<usize>,
    lambda: usize,
}

/// CVaR LP in `(x, y, eta, d, lambda)` with `y_t = sum_j r_jt x_j - lambda`
/// and one row `lambda >= p . x` per cost vector in `cuts`.
fn master_lp(instance: &ProblemInstance, profile: &InvestorProfile, cuts: &[Vec<f64>]) -> Master {
    let panel = &instance.panel;
    let n = panel.num_securities();
    let t_count = panel.num_scenarios();
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
    let lambda = lp.add_var("lambda", f64::NEG_INFINITY, f64::INFINITY, 0.0);
    for t in 0..t_count {
        let terms = [(y0 + t, 1.0), (lambda, 1.0)]
            .into_iter()
            .chain((0..n).map(|j| (x0 + j, -panel.r(j, t))));
        lp.add_row(format!("scenario_{t}"), terms, Relation::Eq, 0.0);
    }
    lp.add_row(
        "expected_return",
        (0..t_count).map(|t| (y0 + t, pi[t])),
        Relation::Ge,
        profile.mu0,
    );
    for t in 0..t_count {
        lp.add_row(
            format!("shortfall_{t}"),
            [(d0 + t, 1.0), (eta, -1.0), (y0 + t, 1.0)],
            Relation::Ge,
            0.0,
        );
    }
    lp.add_row("budget", (0..n).map(|j| (x0 + j, 1.0)), Relation::Le, 1.0);
    let mut master = Master {
        lp,
        x: x0..x0 + n,
        y: y0..y0 + t_count,
        lambda,
    };
    for p in cuts {
        add_cut(&mut master, instance, p);
    }
    master
}

fn add_cut(master: &mut Master, instance: &ProblemInstance, p: &[f64]) {
    let k = master.lp.num_rows();
    let terms = std::iter::once((master.lambda, 1.0)).chain(
        instance
            .costs
            .chargeable()
            .iter()
            .zip(p)
            .map(|(&j, &c)| (master.x.start + j, -c)),
    );
    master
        .lp
        .add_row(format!("profit_cut_{k}"), terms, Relation::Ge, 0.0);
}

fn expected(y: &[f64], pi: &[f64]) -> f64 {
    y.iter().zip(pi).map(|(y, p)| y * p).sum()
}

fn finish(
    instance: &ProblemInstance,
    x: Vec<f64>,
    y: Vec<f64>,
    cvar: f64,
    selection: CostSelection,
    method: &str,
    status: SolveStatus,
    diagnostics: Diagnostics,
) -> BilevelSolution {
    let expected_return = expected(&y, instance.panel.probabilities());
    BilevelSolution {
        profit: selection.profit,
        selection,
        x,
        y,
        cvar,
        expected_return,
        method: method.into(),
        status,
        diagnostics,
    }
}

/// Closed form without coupling rows: the broker always charges the highest
/// grid cost, so the investor solves its LP at those costs.
pub fn solve_ilbfp_lp(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
) -> Result<BilevelSolution> {
    let start = Instant::now();
    let selection = max_cost_selection(&instance.costs)?;
    let f = solve_follower(&instance.panel, profile, &instance.costs, &selection.p)?;
    let x: Vec<f64> = f.x.iter().map(|v| v.max(0.0)).collect();
    let selection = selection.evaluated(instance, &x);
    Ok(finish(
        instance,
        x,
        f.y,
        f.cvar,
        selection,
        "closed_form",
        SolveStatus::Optimal,
        Diagnostics {
            time_s: start.elapsed().as_secs_f64(),
            ..Diagnostics::default()
        },
    ))
}

/// Starting portfolio: the investor's choice at the highest costs, or at the
/// broker's response to an all-ones portfolio when coupling rows are present,
/// or nothing.
fn initial_portfolio(instance: &ProblemInstance, profile: &InvestorProfile) -> Vec<f64> {
    let n = instance.panel.num_securities();
    let p = if instance.costs.has_polyhedron() {
        solve_pricp(instance, &vec![1.0; n]).map(|s| s.p)
    } else {
        Ok(instance.costs.max_costs())
    };
    p.and_then(|p| solve_follower(&instance.panel, profile, &instance.costs, &p))
        .map(|f| f.x.iter().map(|v| v.max(0.0)).collect())
        .unwrap_or_else(|_| vec![0.0; n])
}

/// Alternates broker best responses and master LPs until the newest
/// response violates no profit row.
pub fn solve_ilbfp_cutting_plane(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
) -> Result<BilevelSolution> {
    cutting_plane(instance, profile, &CuttingPlaneLimits::default()).map(|(s, _)| s)
}

/// [`solve_ilbfp_cutting_plane`] with explicit limits, also returning the cut pool.
pub fn cutting_plane(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
    limits: &CuttingPlaneLimits,
) -> Result<(BilevelSolution, CutPool)> {
    profile.validate()?;
    let start = Instant::now();
    let deadline = limits.time_limit.map(|t| start + t);
    let cap = limits
        .max_iterations
        .unwrap_or_else(|| (10.0 * instance.costs.product_size()).min(1e4) as usize)
        .max(1);
    let tol = SolverTolerances::default();

    let x0 = initial_portfolio(instance, profile);
    let first = solve_pricp(instance, &x0)?;
    let mut pool = CutPool {
        cuts: vec![first.p],
        ..CutPool::default()
    };
    let mut master = master_lp(instance, profile, &pool.cuts);
    loop {
        let sol = solve_lp(&master.lp, &tol)?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => {
                return Err(Error::Infeasible(
                    "the investor has no portfolio meeting the return target".into(),
                ))
            }
            status => {
                return Err(Error::LimitReached(format!(
                    "cutting-plane master ended with {status:?}"
                )))
            }
        }
        pool.iterations += 1;
        pool.cvar_trace.push(sol.objective);
        let x: Vec<f64> = sol.primal[master.x.clone()]
            .iter()
            .map(|v| v.max(0.0))
            .collect();
        let lambda = sol.primal[master.lambda];
        let response = solve_pricp(instance, &x)?;
        let converged = response.profit <= lambda + limits.cut_tol;
        let out_of_time = deadline.is_some_and(|d| Instant::now() >= d);
        let repeated = pool.cuts.contains(&response.p);
        if converged || pool.iterations >= cap || out_of_time || repeated {
            let status = if converged {
                SolveStatus::Optimal
            } else if out_of_time {
                SolveStatus::TimeLimit
            } else if repeated {
                log::warn!("broker response repeated without closing the profit gap; stopping");
                SolveStatus::Error
            } else {
                SolveStatus::IterationLimit
            };
            let y = sol.primal[master.y.clone()].to_vec();
            let diagnostics = Diagnostics {
                time_s: start.elapsed().as_secs_f64(),
                iterations: pool.iterations,
                ..Diagnostics::default()
            };
            let s = finish(
                instance,
                x,
                y,
                sol.objective,
                response,
                "cutting_plane",
                status,
                diagnostics,
            );
            return Ok((s, pool));
        }
        add_cut(&mut master, instance, &response.p);
        pool.cuts.push(response.p);
    }
}

/// The LP with one profit row for every admissible cost vector.
pub fn brute_force_ilbfp(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
) -> Result<BilevelSolution> {
    profile.validate()?;
    let start = Instant::now();
    let omega = instance.costs.enumerate(DEFAULT_ENUMERATION_CAP)?;
    if omega.is_empty() {
        return Err(Error::Infeasible("no admissible cost vector".into()));
    }
    let master = master_lp(instance, profile, &omega);
    let sol = solved(&master.lp, "the compact investor-leader LP")?;
    let x: Vec<f64> = sol.primal[master.x.clone()]
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    let response = solve_pricp(instance, &x)?;
    let y = sol.primal[master.y.clone()].to_vec();
    Ok(finish(
        instance,
        x,
        y,
        sol.objective,
        response,
        "brute_force",
        SolveStatus::Optimal,
        Diagnostics {
            time_s: start.elapsed().as_secs_f64(),
            iterations: omega.len(),
            ..Diagnostics::default()
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{tiny1, tiny1_extended};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn tiny_fixture_all_methods() {
        let (inst, profile) = tiny1();
        let lp = solve_ilbfp_lp(&inst, &profile).unwrap();
        let cp = solve_ilbfp_cutting_plane(&inst, &profile).unwrap();
        let bf = brute_force_ilbfp(&inst, &profile).unwrap();
        for s in [&lp, &cp, &bf] {
            assert!(close(s.cvar, 0.015, 1e-9), "{}: {}", s.method, s.cvar);
            assert!(close(s.profit, 0.005, 1e-9), "{}: {}", s.method, s.profit);
            assert!(s.x[0].abs() < 1e-9 && close(s.x[1], 1.0, 1e-9));
        }
        assert_eq!(lp.selection.p, vec![0.02, 0.005]);
    }

    #[test]
    fn coupled_tiny_fixture() {
        let (inst, profile) = tiny1_extended(true);
        let (cp, pool) = cutting_plane(&inst, &profile, &CuttingPlaneLimits::default()).unwrap();
        assert!(close(cp.cvar, 0.015, 1e-9));
        assert!(close(cp.selection.p[1], 0.005, 1e-12));
        assert!(pool.iterations <= 4);
        assert!(close(
            brute_force_ilbfp(&inst, &profile).unwrap().cvar,
            0.015,
            1e-9
        ));
        assert!(solve_ilbfp_lp(&inst, &profile).is_err());
    }

    #[test]
    fn empty_start_still_terminates() {
        let (inst, profile) = tiny1();
        let mut master = master_lp(&inst, &profile, &[vec![0.0, 0.0]]);
        let sol = solve_lp(&master.lp, &SolverTolerances::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        add_cut(&mut master, &inst, &[0.02, 0.005]);
        let sol = solve_lp(&master.lp, &SolverTolerances::default()).unwrap();
        assert!(close(sol.objective, 0.015, 1e-9));
    }
}
