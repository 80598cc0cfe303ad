//! Branch-and-bound for linear programs with binary variables.
//!
//! Nodes are explored best-bound first, ties going to the node created first.
//! Each node differs from its parent only in the bounds of one binary, so the
//! child LP is warm-started from the parent's optimal basis. When the problem
//! declares one-hot groups, branching picks the most fractional member of the
//! group whose relaxation is furthest from a single pick.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{Basis, LpProblem, LpSolution, LpStatus, Simplex, SolverTolerances};

/// An LP plus binary restrictions on some of its variables.
#[derive(Debug, Clone)]
pub struct MilpProblem {
    pub lp: LpProblem,
    pub binaries: Vec<usize>,
    /// One-hot groups; the LP must contain the row `sum(group) = 1`.
    pub sos1: Vec<Vec<usize>>,
}

impl MilpProblem {
    pub fn new(lp: LpProblem) -> Self {
        Self {
            lp,
            binaries: Vec::new(),
            sos1: Vec::new(),
        }
    }

    /// Adds a binary variable with the given objective coefficient.
    pub fn add_binary(&mut self, name: impl Into<String>, cost: f64) -> usize {
        let j = self.lp.add_var(name, 0.0, 1.0, cost);
        self.binaries.push(j);
        j
    }

    pub fn num_binaries(&self) -> usize {
        self.binaries.len()
    }

    pub fn num_continuous(&self) -> usize {
        self.lp.num_vars() - self.binaries.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.lp.validate()?;
        let n = self.lp.num_vars();
        let mut is_binary = vec![false; n];
        for &j in &self.binaries {
            if j >= n {
                return Err(Error::InvalidProblem(format!(
                    "binary index {j} out of range"
                )));
            }
            if self.lp.lower[j] < 0.0 || self.lp.upper[j] > 1.0 {
                return Err(Error::InvalidProblem(format!(
                    "binary {} has bounds outside [0, 1]",
                    self.lp.var_names[j]
                )));
            }
            is_binary[j] = true;
        }
        for group in &self.sos1 {
            if let Some(&j) = group.iter().find(|&&j| j >= n || !is_binary[j]) {
                return Err(Error::InvalidProblem(format!(
                    "one-hot group member {j} is not a binary"
                )));
            }
        }
        Ok(())
    }
}

/// Work limits and tolerances for [`solve_milp`].
#[derive(Debug, Clone)]
pub struct SolveLimits {
    /// Hybrid gap: stop when `bound - incumbent <= mip_gap * max(1, |incumbent|)`.
    pub mip_gap: f64,
    pub int_tol: f64,
    pub node_limit: Option<usize>,
    pub time_limit: Option<Duration>,
    pub lp: SolverTolerances,
}

impl Default for SolveLimits {
    fn default() -> Self {
        Self {
            mip_gap: 1e-6,
            int_tol: 1e-6,
            node_limit: None,
            time_limit: None,
            lp: SolverTolerances::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    NodeLimit,
    TimeLimit,
}

#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: MilpStatus,
    /// Incumbent values; `None` when no integral point was found.
    pub primal: Option<Vec<f64>>,
    pub objective: f64,
    pub best_bound: f64,
    pub nodes: usize,
    pub wall_time: Duration,
    /// Global best bound after each processed node.
    pub bound_trace: Vec<f64>,
    pub lp_iterations: usize,
}

impl MilpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == MilpStatus::Optimal
    }
}

struct Node {
    id: usize,
    /// Bound in maximization scale (`sense.sign() * objective`).
    bound: f64,
    fixings: Vec<(usize, f64)>,
    basis: Option<Basis>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

struct Search<'a> {
    problem: &'a MilpProblem,
    simplex: Simplex,
    limits: &'a SolveLimits,
    lp_tol: SolverTolerances,
    sign: f64,
    group_of: Vec<Option<usize>>,
    incumbent: Option<(f64, Vec<f64>)>,
    lp_iterations: usize,
}

impl<'a> Search<'a> {
    fn bounds(&self, fixings: &[(usize, f64)]) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.problem.lp.lower.clone();
        let mut hi = self.problem.lp.upper.clone();
        for &(j, v) in fixings {
            lo[j] = v;
            hi[j] = v;
        }
        (lo, hi)
    }

    fn solve_node(&mut self, fixings: &[(usize, f64)], warm: Option<&Basis>) -> Result<LpSolution> {
        let (lo, hi) = self.bounds(fixings);
        let mut sol = self.simplex.solve(&lo, &hi, warm, &self.lp_tol);
        self.lp_iterations += sol.iterations;
        if sol.status == LpStatus::IterationLimit && warm.is_some() && !self.out_of_time() {
            sol = self.simplex.solve(&lo, &hi, None, &self.lp_tol);
            self.lp_iterations += sol.iterations;
        }
        if sol.status == LpStatus::IterationLimit && !self.out_of_time() {
            return Err(Error::LimitReached(format!(
                "node relaxation hit the iteration cap after {} pivots",
                sol.iterations
            )));
        }
        Ok(sol)
    }

    fn out_of_time(&self) -> bool {
        self.lp_tol.deadline.is_some_and(|d| Instant::now() >= d)
    }

    fn gap_closed(&self, bound: f64) -> bool {
        match &self.incumbent {
            Some((inc, _)) => bound - inc <= self.limits.mip_gap * inc.abs().max(1.0),
            None => false,
        }
    }

    fn fractional(&self, x: &[f64], j: usize) -> bool {
        (x[j] - x[j].round()).abs() > self.limits.int_tol
    }

    /// Variable to branch on, or `None` when the point is integral.
    fn branch_var(&self, x: &[f64]) -> Option<usize> {
        let closeness = |j: usize| (x[j] - 0.5).abs();
        let mut best_group: Option<(f64, usize)> = None;
        for (g, group) in self.problem.sos1.iter().enumerate() {
            if !group.iter().any(|&j| self.fractional(x, j)) {
                continue;
            }
            let ambiguity = 1.0 - group.iter().map(|&j| x[j]).fold(0.0, f64::max);
            if best_group.is_none_or(|(a, _)| ambiguity > a + 1e-12) {
                best_group = Some((ambiguity, g));
            }
        }
        let candidates: Box<dyn Iterator<Item = usize> + '_> = match best_group {
            Some((_, g)) => Box::new(self.problem.sos1[g].iter().copied()),
            None => Box::new(
                self.problem
                    .binaries
                    .iter()
                    .copied()
                    .filter(|&j| self.group_of[j].is_none()),
            ),
        };
        let mut pick: Option<usize> = None;
        for j in candidates.filter(|&j| self.fractional(x, j)) {
            if pick.is_none_or(|p| closeness(j) < closeness(p) - 1e-12) {
                pick = Some(j);
            }
        }
        pick
    }

    fn offer(&mut self, value: f64, x: Vec<f64>) {
        if self.incumbent.as_ref().is_none_or(|(inc, _)| value > *inc) {
            self.incumbent = Some((value, x));
        }
    }

    /// LP completion of `fixings`, capped at `2 (rows + cols)` pivots.
    fn complete(
        &mut self,
        fixings: &[(usize, f64)],
        warm: Option<&Basis>,
    ) -> Option<(f64, Vec<f64>)> {
        let (lo, hi) = self.bounds(fixings);
        let mut tol = self.lp_tol.clone();
        let cap = 2 * (self.problem.lp.rows.len() + self.problem.lp.num_vars());
        tol.max_iterations = Some(tol.max_iterations.map_or(cap, |m| m.min(cap)));
        let sol = self.simplex.solve(&lo, &hi, warm, &tol);
        self.lp_iterations += sol.iterations;
        (sol.status == LpStatus::Optimal).then(|| (self.sign * sol.objective, sol.primal))
    }

    /// Rounds the root relaxation (largest member of each group, nearest
    /// integer elsewhere) and completes the point with an LP solve.
    fn rounding_heuristic(&mut self, x: &[f64], warm: Option<&Basis>) {
        let mut fixings = Vec::with_capacity(self.problem.binaries.len());
        for group in &self.problem.sos1 {
            let top = group
                .iter()
                .copied()
                .max_by(|&a, &b| x[a].total_cmp(&x[b]).then_with(|| b.cmp(&a)));
            for &j in group {
                fixings.push((j, if Some(j) == top { 1.0 } else { 0.0 }));
            }
        }
        for &j in &self.problem.binaries {
            if self.group_of[j].is_none() {
                fixings.push((j, x[j].round().clamp(0.0, 1.0)));
            }
        }
        if let Some((value, x)) = self.complete(&fixings, warm) {
            self.offer(value, x);
        }
    }

    /// Offers an integral node point after re-solving with its binaries fixed
    /// at their rounded values, so binaries within `int_tol` of an integer do
    /// not leak through big-M rows.
    fn offer_polished(&mut self, value: f64, x: Vec<f64>, warm: Option<&Basis>) {
        let fixings: Vec<(usize, f64)> = self
            .problem
            .binaries
            .iter()
            .map(|&j| (j, x[j].round().clamp(0.0, 1.0)))
            .collect();
        match self.complete(&fixings, warm) {
            Some((v, polished)) => self.offer(v, polished),
            None => self.offer(value, x),
        }
    }
}

/// Solves `problem` by LP-based branch and bound over its binaries.
pub fn solve_milp(problem: &MilpProblem, limits: &SolveLimits) -> Result<MilpSolution> {
    problem.validate()?;
    let start = Instant::now();
    let deadline = limits.time_limit.map(|t| start + t);
    let mut lp_tol = limits.lp.clone();
    lp_tol.deadline = match (lp_tol.deadline, deadline) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    let mut group_of = vec![None; problem.lp.num_vars()];
    for (g, group) in problem.sos1.iter().enumerate() {
        for &j in group {
            group_of[j] = Some(g);
        }
    }
    let mut search = Search {
        problem,
        simplex: Simplex::new(&problem.lp),
        limits,
        lp_tol,
        sign: problem.lp.sense.sign(),
        group_of,
        incumbent: None,
        lp_iterations: 0,
    };

    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    let mut nodes = 0usize;
    let mut trace = Vec::new();
    let mut global_bound = f64::INFINITY;
    let mut root_done = false;
    let mut pending: Option<Node> = Some(Node {
        id: 0,
        bound: f64::INFINITY,
        fixings: Vec::new(),
        basis: None,
    });
    next_id += 1;

    let status = loop {
        let node = match pending.take().or_else(|| heap.pop()) {
            Some(node) => node,
            None => break MilpStatus::Optimal,
        };
        if search.gap_closed(node.bound) {
            // Best-first order: every remaining node is no better.
            heap.clear();
            break MilpStatus::Optimal;
        }
        if search.out_of_time() {
            heap.push(node);
            break MilpStatus::TimeLimit;
        }
        if limits.node_limit.is_some_and(|cap| nodes >= cap) {
            heap.push(node);
            break MilpStatus::NodeLimit;
        }
        nodes += 1;
        let sol = search.solve_node(&node.fixings, node.basis.as_ref())?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => {}
            LpStatus::Unbounded => {
                return Err(Error::Unbounded(
                    "relaxation of a branch-and-bound node is unbounded".into(),
                ));
            }
            LpStatus::IterationLimit => {
                heap.push(node);
                break MilpStatus::TimeLimit;
            }
        }
        if sol.status == LpStatus::Optimal {
            let value = search.sign * sol.objective;
            if !root_done {
                root_done = true;
                search.rounding_heuristic(&sol.primal, sol.basis.as_ref());
            }
            match search.branch_var(&sol.primal) {
                None => search.offer_polished(value, sol.primal, sol.basis.as_ref()),
                Some(j) if !search.gap_closed(value) => {
                    for v in [1.0, 0.0] {
                        let mut fixings = node.fixings.clone();
                        fixings.push((j, v));
                        heap.push(Node {
                            id: next_id,
                            bound: value,
                            fixings,
                            basis: sol.basis.clone(),
                        });
                        next_id += 1;
                    }
                }
                Some(_) => {}
            }
        } else if !root_done {
            root_done = true;
        }
        let open = heap.peek().map_or(f64::NEG_INFINITY, |n| n.bound);
        let inc = search
            .incumbent
            .as_ref()
            .map_or(f64::NEG_INFINITY, |(v, _)| *v);
        global_bound = global_bound.min(open.max(inc));
        trace.push(global_bound * search.sign);
    };

    let (objective, primal) = match search.incumbent.take() {
        Some((v, x)) => (search.sign * v, Some(x)),
        None => (f64::NAN, None),
    };
    let best_bound = match status {
        MilpStatus::Optimal => objective,
        _ => {
            let open = heap
                .iter()
                .map(|n| n.bound)
                .fold(f64::NEG_INFINITY, f64::max);
            let inc = if primal.is_some() {
                search.sign * objective
            } else {
                f64::NEG_INFINITY
            };
            search.sign * global_bound.min(open.max(inc))
        }
    };
    let status = if status == MilpStatus::Optimal && primal.is_none() {
        MilpStatus::Infeasible
    } else {
        status
    };
    Ok(MilpSolution {
        status,
        primal,
        objective,
        best_bound,
        nodes,
        wall_time: start.elapsed(),
        bound_trace: trace,
        lp_iterations: search.lp_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{Relation, Sense};

    fn knapsack(values: &[f64], weights: &[f64], cap: f64) -> MilpProblem {
        let mut m = MilpProblem::new(LpProblem::new(Sense::Maximize));
        let vars: Vec<usize> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| m.add_binary(format!("item{i}"), v))
            .collect();
        m.lp.add_row(
            "cap",
            vars.iter().zip(weights).map(|(&j, &w)| (j, w)),
            Relation::Le,
            cap,
        );
        m
    }

    #[test]
    fn two_point_enumeration() {
        let m = knapsack(&[3.0, 2.0], &[1.0, 1.0], 1.0);
        let s = solve_milp(&m, &SolveLimits::default()).unwrap();
        assert_eq!(s.status, MilpStatus::Optimal);
        assert!((s.objective - 3.0).abs() < 1e-9);
        assert_eq!(s.primal.unwrap()[..2], [1.0, 0.0]);
    }

    #[test]
    fn one_hot_group_forces_single_pick() {
        let mut m = MilpProblem::new(LpProblem::new(Sense::Maximize));
        let a = m.add_binary("a1", 1.0);
        let b = m.add_binary("a2", 1.0);
        m.lp.add_row("pick", [(a, 1.0), (b, 1.0)], Relation::Eq, 1.0);
        m.sos1.push(vec![a, b]);
        let s = solve_milp(&m, &SolveLimits::default()).unwrap();
        assert!((s.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn three_item_knapsack() {
        let m = knapsack(&[4.0, 5.0, 6.0], &[2.0, 3.0, 4.0], 5.0);
        let s = solve_milp(&m, &SolveLimits::default()).unwrap();
        // enumeration of the 8 subsets: items 1 and 2 fill the capacity for 4 + 5
        assert!((s.objective - 9.0).abs() < 1e-9);
        assert_eq!(s.primal.unwrap(), vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn infeasible_integer_problem() {
        let mut m = MilpProblem::new(LpProblem::new(Sense::Maximize));
        let a = m.add_binary("a", 1.0);
        let b = m.add_binary("b", 1.0);
        m.lp.add_row("half", [(a, 1.0), (b, 1.0)], Relation::Eq, 1.5);
        let s = solve_milp(&m, &SolveLimits::default()).unwrap();
        assert_eq!(s.status, MilpStatus::Infeasible);
        assert!(s.primal.is_none());
    }

    #[test]
    fn node_limit_keeps_incumbent() {
        let m = knapsack(&[5.0, 4.0, 3.0, 7.0, 6.0], &[2.5, 2.0, 1.5, 3.5, 3.0], 6.0);
        let limits = SolveLimits {
            node_limit: Some(1),
            ..SolveLimits::default()
        };
        let s = solve_milp(&m, &limits).unwrap();
        assert!(matches!(
            s.status,
            MilpStatus::NodeLimit | MilpStatus::Optimal
        ));
        assert!(s.best_bound + 1e-9 >= s.objective || s.primal.is_none());
    }

    #[test]
    fn rejects_non_binary_group_member() {
        let mut m = MilpProblem::new(LpProblem::new(Sense::Maximize));
        let a = m.add_binary("a", 1.0);
        let x = m.lp.add_var("x", 0.0, 1.0, 0.0);
        m.sos1.push(vec![a, x]);
        assert!(solve_milp(&m, &SolveLimits::default()).is_err());
    }
}
