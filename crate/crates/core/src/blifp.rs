//! Broker as leader, investor as follower.
//!
//! The investor's LP is replaced by its primal rows, its dual rows and an
//! equation between the two objectives. The products of cost indicators with
//! dual multipliers are linearized with a big-M constant, either per scenario
//! (`Blifp1`, one copy of each scenario multiplier per grid entry) or per grid
//! entry (`Blifp2`, one slack per grid entry). Among the investor's optimal
//! portfolios the single-level model picks the one best for the broker, and
//! [`brute_force_blifp`] follows the same rule.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::follower::{build_cvar_lp, solve_follower};
use crate::leader::{add_profit_objective, leader_block, LeaderLayout};
use crate::lp::{solve_lp, LpStatus, Relation, SolverTolerances};
use crate::market_data::{InvestorProfile, ProblemInstance};
use crate::milp::{solve_milp, MilpProblem, MilpStatus, SolveLimits};
use crate::pricing::CostSelection;
use crate::solution::{BilevelSolution, Diagnostics, SolveStatus};

/// Largest grid product [`brute_force_blifp`] enumerates by default.
pub const DEFAULT_ENUMERATION_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    Blifp1,
    Blifp2,
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Formulation::Blifp1 => "blifp1",
            Formulation::Blifp2 => "blifp2",
        })
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "blifp1" => Ok(Formulation::Blifp1),
            "blifp2" => Ok(Formulation::Blifp2),
            other => Err(Error::InvalidInput(format!(
                "unknown formulation {other:?}; expected blifp1 or blifp2"
            ))),
        }
    }
}

/// Positions of the dual-side variables on top of the leader block.
#[derive(Debug, Clone)]
pub struct BlifpLayout {
    pub leader: LeaderLayout,
    pub beta: usize,
    pub mu: usize,
    pub gamma: Range<usize>,
    pub delta: Range<usize>,
    /// `Blifp1`: first column of the `T` linearized multipliers of entry `(i, k)`.
    pub delta_hat: Vec<Vec<usize>>,
    /// `Blifp2`: slack of entry `(i, k)` and its linearized copy.
    pub sigma: Vec<Vec<usize>>,
    pub sigma_hat: Vec<Vec<usize>>,
    pub duality_row: usize,
}

fn dual_common(
    milp: &mut MilpProblem,
    instance: &ProblemInstance,
    profile: &InvestorProfile,
) -> (usize, usize, Range<usize>, Range<usize>) {
    let panel = &instance.panel;
    let t_count = panel.num_scenarios();
    let pi = panel.probabilities();
    let lp = &mut milp.lp;
    let beta = lp.add_var("beta", 0.0, f64::INFINITY, 0.0);
    let mu = lp.add_var("mu", f64::NEG_INFINITY, 0.0, 0.0);
    let g0 = lp.num_vars();
    for t in 0..t_count {
        lp.add_var(format!("gamma_{t}"), f64::NEG_INFINITY, 0.0, 0.0);
    }
    let d0 = lp.num_vars();
    for t in 0..t_count {
        lp.add_var(format!("delta_{t}"), f64::NEG_INFINITY, f64::INFINITY, 0.0);
    }
    for j in instance.free_securities() {
        let terms =
            std::iter::once((beta, 1.0)).chain((0..t_count).map(|t| (d0 + t, -panel.r(j, t))));
        lp.add_row(
            format!("dual_free_{}", panel.names()[j]),
            terms,
            Relation::Ge,
            0.0,
        );
    }
    lp.add_row(
        "dual_mass",
        (0..t_count).map(|t| (g0 + t, -1.0)),
        Relation::Eq,
        1.0,
    );
    for t in 0..t_count {
        lp.add_row(
            format!("dual_cap_{t}"),
            [(g0 + t, 1.0)],
            Relation::Ge,
            -pi[t] / profile.alpha,
        );
    }
    for t in 0..t_count {
        lp.add_row(
            format!("dual_link_{t}"),
            [(g0 + t, 1.0), (d0 + t, 1.0), (mu, pi[t])],
            Relation::Eq,
            0.0,
        );
    }
    (beta, mu, g0..g0 + t_count, d0..d0 + t_count)
}

fn check_inputs(profile: &InvestorProfile, big_m: f64) -> Result<()> {
    profile.validate()?;
    if !(big_m > 0.0 && big_m.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "big-M must be positive and finite, got {big_m}"
        )));
    }
    Ok(())
}

/// Single-level model with one linearized multiplier per grid entry and scenario.
pub fn build_blifp1(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
    big_m: f64,
) -> Result<(MilpProblem, BlifpLayout)> {
    check_inputs(profile, big_m)?;
    let panel = &instance.panel;
    let costs = &instance.costs;
    let t_count = panel.num_scenarios();
    let (mut milp, leader) = leader_block(instance, profile, true);
    add_profit_objective(&mut milp, instance, &leader, 1.0);
    let cvar = leader.cvar_expr(profile, panel.probabilities());
    let (beta, mu, gamma, delta) = dual_common(&mut milp, instance, profile);
    let lp = &mut milp.lp;

    let delta_hat: Vec<Vec<usize>> = costs
        .grids()
        .iter()
        .enumerate()
        .map(|(i, grid)| {
            (0..grid.len())
                .map(|k| {
                    let first = lp.num_vars();
                    for t in 0..t_count {
                        lp.add_var(format!("dhat_{i}_{k}_{t}"), 0.0, f64::INFINITY, 0.0);
                    }
                    first
                })
                .collect()
        })
        .collect();
    for (i, (&j, grid)) in costs.chargeable().iter().zip(costs.grids()).enumerate() {
        let mut terms = vec![(beta, 1.0)];
        terms.extend((0..t_count).map(|t| (delta.start + t, -panel.r(j, t))));
        for (k, &c) in grid.iter().enumerate() {
            terms.extend((0..t_count).map(|t| (delta_hat[i][k] + t, c)));
        }
        lp.add_row(format!("dual_charged_{i}"), terms, Relation::Ge, 0.0);
    }
    let duality_row = lp.add_row(
        "strong_duality",
        cvar.iter()
            .copied()
            .chain([(beta, -1.0), (mu, -profile.mu0)]),
        Relation::Eq,
        0.0,
    );
    for (i, grid) in costs.grids().iter().enumerate() {
        for k in 0..grid.len() {
            let a = leader.a[i][k];
            for t in 0..t_count {
                let h = delta_hat[i][k] + t;
                let dt = delta.start + t;
                lp.add_row(
                    format!("dhat_le_delta_{i}_{k}_{t}"),
                    [(h, 1.0), (dt, -1.0)],
                    Relation::Le,
                    0.0,
                );
                lp.add_row(
                    format!("dhat_le_m_{i}_{k}_{t}"),
                    [(h, 1.0), (a, -big_m)],
                    Relation::Le,
                    0.0,
                );
                lp.add_row(
                    format!("dhat_ge_{i}_{k}_{t}"),
                    [(h, 1.0), (dt, -1.0), (a, -big_m)],
                    Relation::Ge,
                    -big_m,
                );
            }
        }
    }
    let layout = BlifpLayout {
        leader,
        beta,
        mu,
        gamma,
        delta,
        delta_hat,
        sigma: Vec::new(),
        sigma_hat: Vec::new(),
        duality_row,
    };
    Ok((milp, layout))
}

/// Single-level model with one dual slack per grid entry.
pub fn build_blifp2(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
    big_m: f64,
) -> Result<(MilpProblem, BlifpLayout)> {
    check_inputs(profile, big_m)?;
    let panel = &instance.panel;
    let costs = &instance.costs;
    let t_count = panel.num_scenarios();
    let (mut milp, leader) = leader_block(instance, profile, true);
    add_profit_objective(&mut milp, instance, &leader, 1.0);
    let cvar = leader.cvar_expr(profile, panel.probabilities());
    let (beta, mu, gamma, delta) = dual_common(&mut milp, instance, profile);
    let lp = &mut milp.lp;

    let mut sigma = Vec::with_capacity(costs.num_chargeable());
    let mut sigma_hat = Vec::with_capacity(costs.num_chargeable());
    for (i, grid) in costs.grids().iter().enumerate() {
        sigma.push(
            (0..grid.len())
                .map(|k| lp.add_var(format!("sigma_{i}_{k}"), 0.0, f64::INFINITY, 0.0))
                .collect::<Vec<_>>(),
        );
        sigma_hat.push(
            (0..grid.len())
                .map(|k| lp.add_var(format!("sigmahat_{i}_{k}"), 0.0, f64::INFINITY, 0.0))
                .collect::<Vec<_>>(),
        );
    }
    for (i, (&j, grid)) in costs.chargeable().iter().zip(costs.grids()).enumerate() {
        for (k, &c) in grid.iter().enumerate() {
            let terms = [(beta, 1.0), (sigma[i][k], 1.0)]
                .into_iter()
                .chain((0..t_count).map(|t| (delta.start + t, -(panel.r(j, t) - c))));
            lp.add_row(format!("dual_entry_{i}_{k}"), terms, Relation::Ge, 0.0);
        }
    }
    let duality_row = lp.add_row(
        "strong_duality",
        cvar.iter()
            .copied()
            .chain([(beta, -1.0), (mu, -profile.mu0)])
            .chain(sigma_hat.iter().flatten().map(|&v| (v, -1.0))),
        Relation::Eq,
        0.0,
    );
    for (i, grid) in costs.grids().iter().enumerate() {
        for k in 0..grid.len() {
            let (a, s, h) = (leader.a[i][k], sigma[i][k], sigma_hat[i][k]);
            lp.add_row(
                format!("shat_le_sigma_{i}_{k}"),
                [(h, 1.0), (s, -1.0)],
                Relation::Le,
                0.0,
            );
            lp.add_row(
                format!("shat_le_m_{i}_{k}"),
                [(h, 1.0), (a, -big_m)],
                Relation::Le,
                0.0,
            );
            lp.add_row(
                format!("shat_ge_{i}_{k}"),
                [(h, 1.0), (s, -1.0), (a, -big_m)],
                Relation::Ge,
                -big_m,
            );
        }
    }
    let layout = BlifpLayout {
        leader,
        beta,
        mu,
        gamma,
        delta,
        delta_hat: Vec::new(),
        sigma,
        sigma_hat,
        duality_row,
    };
    Ok((milp, layout))
}

pub fn build_blifp(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
    formulation: Formulation,
    big_m: f64,
) -> Result<(MilpProblem, BlifpLayout)> {
    match formulation {
        Formulation::Blifp1 => build_blifp1(instance, profile, big_m),
        Formulation::Blifp2 => build_blifp2(instance, profile, big_m),
    }
}

/// Variable and constraint counts of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSize {
    pub binaries: usize,
    pub continuous: usize,
    /// Explicit constraint rows.
    pub rows: usize,
    /// Finite bounds on continuous variables (sign restrictions).
    pub bounds: usize,
}

impl ModelSize {
    pub fn of(milp: &MilpProblem) -> Self {
        let mut is_binary = vec![false; milp.lp.num_vars()];
        for &j in &milp.binaries {
            is_binary[j] = true;
        }
        let bounds = (0..milp.lp.num_vars())
            .filter(|&j| !is_binary[j])
            .map(|j| {
                usize::from(milp.lp.lower[j].is_finite())
                    + usize::from(milp.lp.upper[j].is_finite())
            })
            .sum();
        Self {
            binaries: milp.num_binaries(),
            continuous: milp.num_continuous(),
            rows: milp.lp.num_rows(),
            bounds,
        }
    }

    /// Rows plus sign restrictions.
    pub fn constraints(&self) -> usize {
        self.rows + self.bounds
    }
}

/// Starting big-M: `(T / alpha) * (r_max - c_min + 1)`.
pub fn initial_big_m(instance: &ProblemInstance, profile: &InvestorProfile) -> f64 {
    let t = instance.panel.num_scenarios() as f64;
    t / profile.alpha * (instance.panel.r_max() - instance.costs.c_min() + 1.0)
}

#[derive(Debug, Clone)]
pub struct BilevelLimits {
    pub milp: SolveLimits,
    /// Overrides [`initial_big_m`].
    pub big_m: Option<f64>,
    pub max_escalations: usize,
    /// Allowed gap between the model's CVaR and a fresh investor solve.
    pub certificate_tol: f64,
    /// A multiplier within `near_bound * M` of `M` triggers an escalation.
    pub near_bound: f64,
    /// Overall wall-clock budget across escalations.
    pub time_limit: Option<Duration>,
}

impl Default for BilevelLimits {
    fn default() -> Self {
        Self {
            milp: SolveLimits {
                mip_gap: 1e-9,
                ..SolveLimits::default()
            },
            big_m: None,
            max_escalations: 6,
            certificate_tol: 1e-6,
            near_bound: 1e-3,
            time_limit: None,
        }
    }
}

/// Largest value any big-M-restricted multiplier takes (or must take) at `v`.
fn multiplier_peak(
    instance: &ProblemInstance,
    formulation: Formulation,
    layout: &BlifpLayout,
    v: &[f64],
) -> f64 {
    let delta = &v[layout.delta.clone()];
    match formulation {
        Formulation::Blifp1 => delta.iter().copied().fold(0.0, f64::max),
        Formulation::Blifp2 => {
            let beta = v[layout.beta];
            let panel = &instance.panel;
            let costs = &instance.costs;
            let mut peak = 0.0f64;
            for (&j, grid) in costs.chargeable().iter().zip(costs.grids()) {
                for &c in grid {
                    let s: f64 = delta
                        .iter()
                        .enumerate()
                        .map(|(t, &dt)| (panel.r(j, t) - c) * dt)
                        .sum();
                    peak = peak.max(s - beta);
                }
            }
            peak
        }
    }
}

fn extract(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
    layout: &LeaderLayout,
    v: &[f64],
) -> (CostSelection, Vec<f64>, Vec<f64>, f64, f64) {
    let selection = layout.selection(instance, v);
    let x = layout.portfolio(instance, v);
    let y = v[layout.y.clone()].to_vec();
    let pi = instance.panel.probabilities();
    let cvar = layout
        .cvar_expr(profile, pi)
        .iter()
        .map(|&(c, w)| w * v[c])
        .sum();
    let expected = y.iter().zip(pi).map(|(y, p)| y * p).sum();
    (selection, x, y, cvar, expected)
}

/// Solves the broker-leader problem through `formulation`, doubling the big-M
/// constant while a restricted multiplier sits at its bound or the investor's
/// optimality cannot be certified.
pub fn solve_blifp(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
    formulation: Formulation,
    limits: &BilevelLimits,
) -> Result<BilevelSolution> {
    profile.validate()?;
    let start = Instant::now();
    if !follower_feasible_somewhere(instance, profile) {
        return Err(Error::Infeasible(
            "no admissible cost vector leaves the investor a feasible portfolio".into(),
        ));
    }
    let deadline = limits.time_limit.map(|t| start + t);
    let mut big_m = limits
        .big_m
        .unwrap_or_else(|| initial_big_m(instance, profile));
    let mut nodes = 0usize;
    let mut escalations = 0usize;
    loop {
        let (milp, layout) = build_blifp(instance, profile, formulation, big_m)?;
        let mut milp_limits = limits.milp.clone();
        if let Some(d) = deadline {
            let left = d.saturating_duration_since(Instant::now());
            milp_limits.time_limit = Some(milp_limits.time_limit.map_or(left, |t| t.min(left)));
        }
        let sol = solve_milp(&milp, &milp_limits)?;
        nodes += sol.nodes;
        let can_escalate = escalations < limits.max_escalations;
        let Some(v) = sol.primal.as_ref() else {
            match sol.status {
                MilpStatus::Infeasible => {
                    if !can_escalate {
                        return Err(Error::Infeasible(
                            "no admissible cost vector leaves the investor a feasible portfolio"
                                .into(),
                        ));
                    }
                    big_m *= 2.0;
                    escalations += 1;
                    continue;
                }
                status => {
                    return Err(Error::LimitReached(format!(
                        "{formulation} stopped with {status:?} before finding a solution"
                    )))
                }
            }
        };
        let (selection, x, y, cvar, expected_return) =
            extract(instance, profile, &layout.leader, v);
        let profit = instance.profit(&x, &selection.p);
        let mut status = SolveStatus::from(sol.status);
        if status == SolveStatus::Optimal {
            let peak = multiplier_peak(instance, formulation, &layout, v);
            let at_bound = peak >= (1.0 - limits.near_bound) * big_m;
            let certified = solve_follower(&instance.panel, profile, &instance.costs, &selection.p)
                .map(|f| (f.cvar - cvar).abs() <= limits.certificate_tol)
                .unwrap_or(false);
            if at_bound || !certified {
                if can_escalate {
                    log::debug!("{formulation}: escalating big-M from {big_m} (peak {peak}, certified {certified})");
                    big_m *= 2.0;
                    escalations += 1;
                    continue;
                }
                if !certified {
                    return Err(Error::CertificateFailure(format!(
                        "{formulation} solution is not investor-optimal after {escalations} big-M escalations (M = {big_m})"
                    )));
                }
                status = SolveStatus::CertificateFailure;
            }
        }
        let selection = CostSelection {
            profit,
            ..selection
        };
        return Ok(BilevelSolution {
            selection,
            x,
            y,
            profit,
            cvar,
            expected_return,
            method: formulation.to_string(),
            status,
            diagnostics: Diagnostics {
                nodes,
                time_s: start.elapsed().as_secs_f64(),
                m_final: Some(big_m),
                m_escalations: escalations,
                iterations: 0,
                best_bound: Some(sol.best_bound),
            },
        });
    }
}

/// The investor problem is feasible for some admissible costs only if it is
/// feasible at the cheapest grid entries (costs only shrink the feasible set).
fn follower_feasible_somewhere(instance: &ProblemInstance, profile: &InvestorProfile) -> bool {
    let cheapest: Vec<f64> = instance.costs.grids().iter().map(|g| g[0]).collect();
    !matches!(
        solve_follower(&instance.panel, profile, &instance.costs, &cheapest),
        Err(Error::Infeasible(_))
    )
}

/// Enumerates the grid product: for each admissible cost vector, solves the
/// investor LP, then maximizes the broker profit over the investor's optimal
/// portfolios. Returns the best cost vector, the first in lexicographic order
/// among equals.
pub fn brute_force_blifp(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
    cap: usize,
) -> Result<BilevelSolution> {
    profile.validate()?;
    let start = Instant::now();
    let tol = SolverTolerances::default();
    let pi = instance.panel.probabilities();
    let mut best: Option<BilevelSolution> = None;
    let candidates = instance.costs.enumerate(cap)?;
    for p in &candidates {
        let (mut lp, layout) = build_cvar_lp(&instance.panel, profile, &instance.costs, p)?;
        let first = solve_lp(&lp, &tol)?;
        match first.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => continue,
            status => {
                return Err(Error::LimitReached(format!(
                    "investor LP ended with {status:?}"
                )))
            }
        }
        let value = first.objective;
        let cvar_terms: Vec<(usize, f64)> = std::iter::once((layout.eta, 1.0))
            .chain(
                layout
                    .d
                    .clone()
                    .zip(pi)
                    .map(|(c, &p)| (c, -p / profile.alpha)),
            )
            .collect();
        lp.add_row(
            "keep_optimal",
            cvar_terms.iter().copied(),
            Relation::Ge,
            value - 1e-10,
        );
        lp.objective.iter_mut().for_each(|c| *c = 0.0);
        for (&j, &c) in instance.costs.chargeable().iter().zip(p) {
            lp.objective[layout.x.start + j] = c;
        }
        let second = solve_lp(&lp, &tol)?;
        if second.status != LpStatus::Optimal {
            return Err(Error::LimitReached(format!(
                "tie-break LP ended with {:?}",
                second.status
            )));
        }
        let x: Vec<f64> = second.primal[layout.x.clone()]
            .iter()
            .map(|v| v.max(0.0))
            .collect();
        let profit = instance.profit(&x, p);
        if best
            .as_ref()
            .is_some_and(|b| profit <= b.profit + 1e-9 * b.profit.abs().max(1.0))
        {
            continue;
        }
        let y = second.primal[layout.y.clone()].to_vec();
        let cvar = cvar_terms.iter().map(|&(c, w)| w * second.primal[c]).sum();
        let expected_return = y.iter().zip(pi).map(|(y, p)| y * p).sum();
        let picks = instance
            .costs
            .grids()
            .iter()
            .zip(p)
            .map(|(g, v)| {
                g.iter()
                    .position(|c| c == v)
                    .expect("cost taken from its grid")
            })
            .collect();
        best = Some(BilevelSolution {
            selection: CostSelection {
                picks,
                p: p.clone(),
                profit,
            },
            x,
            y,
            profit,
            cvar,
            expected_return,
            method: "brute_force".into(),
            status: SolveStatus::Optimal,
            diagnostics: Diagnostics::default(),
        });
    }
    let mut best = best.ok_or_else(|| {
        Error::Infeasible(
            "no admissible cost vector leaves the investor a feasible portfolio".into(),
        )
    })?;
    best.diagnostics.iterations = candidates.len();
    best.diagnostics.time_s = start.elapsed().as_secs_f64();
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::tiny1;

    #[test]
    fn tiny_fixture_both_formulations() {
        let (inst, profile) = tiny1();
        for f in [Formulation::Blifp1, Formulation::Blifp2] {
            let s = solve_blifp(&inst, &profile, f, &BilevelLimits::default()).unwrap();
            assert_eq!(s.status, SolveStatus::Optimal);
            assert!((s.profit - 0.005).abs() < 1e-9, "{f}: {}", s.profit);
            assert!((s.cvar - 0.015).abs() < 1e-9, "{f}: {}", s.cvar);
            assert!(s.x[0].abs() < 1e-9 && (s.x[1] - 1.0).abs() < 1e-9);
        }
        let b = brute_force_blifp(&inst, &profile, DEFAULT_ENUMERATION_CAP).unwrap();
        assert!((b.profit - 0.005).abs() < 1e-9, "{}", b.profit);
        assert_eq!(b.selection.p, vec![0.01, 0.005]);
        assert_eq!(b.diagnostics.iterations, 2);
    }

    #[test]
    fn nonpositive_big_m_is_rejected() {
        let (inst, profile) = tiny1();
        assert!(build_blifp1(&inst, &profile, 0.0).is_err());
        assert!(build_blifp2(&inst, &profile, -1.0).is_err());
    }

    #[test]
    fn formulation_names_round_trip() {
        for f in [Formulation::Blifp1, Formulation::Blifp2] {
            assert_eq!(f.to_string().parse::<Formulation>().unwrap(), f);
        }
        assert!("blifp3".parse::<Formulation>().is_err());
    }
}
