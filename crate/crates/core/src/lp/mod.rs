//! Linear programming kernel.
//!
//! Problems are stored row-wise with sparse coefficient lists and per-variable
//! bounds. [`solve_lp`] runs a bounded-variable revised simplex method over a
//! sparse LU factorization of the basis and reports primal values together with
//! the row duals (marginal objective change per unit of right-hand side).

mod factor;
mod format;
mod simplex;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::write_lp_file;
pub(crate) use simplex::Simplex;

/// Objective direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Sense {
    /// `+1` for maximization, `-1` for minimization.
    pub fn sign(self) -> f64 {
        match self {
            Sense::Maximize => 1.0,
            Sense::Minimize => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    /// Sparse `(variable, coefficient)` pairs; a variable appears at most once.
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub var_names: Vec<String>,
    pub rows: Vec<Row>,
}

impl LpProblem {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            objective: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            var_names: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Adds a variable and returns its index.
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.var_names.push(name.into());
        self.objective.len() - 1
    }

    /// Adds a constraint row; duplicate variable entries are merged.
    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        terms: impl IntoIterator<Item = (usize, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> usize {
        let mut terms: Vec<(usize, f64)> = terms.into_iter().filter(|&(_, v)| v != 0.0).collect();
        terms.sort_by_key(|&(j, _)| j);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (j, v) in terms {
            match merged.last_mut() {
                Some((last, acc)) if *last == j => *acc += v,
                _ => merged.push((j, v)),
            }
        }
        merged.retain(|&(_, v)| v != 0.0);
        self.rows.push(Row {
            name: name.into(),
            terms: merged,
            relation,
            rhs,
        });
        self.rows.len() - 1
    }

    /// Checks the structural invariants: consistent lengths, finite data,
    /// coherent bounds and in-range variable references.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n || self.var_names.len() != n {
            return Err(Error::InvalidProblem(
                "objective, bounds and names must have one entry per variable".into(),
            ));
        }
        for (j, &c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::InvalidProblem(format!(
                    "objective coefficient of variable {j} is not finite"
                )));
            }
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan()
                || hi.is_nan()
                || lo == f64::INFINITY
                || hi == f64::NEG_INFINITY
                || lo > hi
            {
                return Err(Error::InvalidProblem(format!(
                    "variable {} has invalid bounds [{lo}, {hi}]",
                    self.var_names[j]
                )));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::InvalidProblem(format!(
                    "right-hand side of row {i} is not finite"
                )));
            }
            let mut prev: Option<usize> = None;
            for &(j, v) in &row.terms {
                if j >= n {
                    return Err(Error::InvalidProblem(format!(
                        "row {} references variable {j} but only {n} variables exist",
                        row.name
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::InvalidProblem(format!(
                        "row {} has a non-finite coefficient",
                        row.name
                    )));
                }
                if prev.is_some_and(|p| p >= j) {
                    return Err(Error::InvalidProblem(format!(
                        "row {} lists variables out of order or repeated",
                        row.name
                    )));
                }
                prev = Some(j);
            }
        }
        Ok(())
    }

    pub fn row_activity(&self, row: usize, x: &[f64]) -> f64 {
        self.rows[row].terms.iter().map(|&(j, v)| v * x[j]).sum()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

/// Numerical tolerances and work limits for [`solve_lp`].
#[derive(Debug, Clone)]
pub struct SolverTolerances {
    /// Primal and dual feasibility tolerance.
    pub feas_tol: f64,
    /// Allowed primal/dual objective gap at optimality.
    pub duality_tol: f64,
    /// Reduced-cost threshold for pricing.
    pub opt_tol: f64,
    /// Smallest pivot magnitude accepted in the ratio test.
    pub pivot_tol: f64,
    /// Pivot cap; `None` means `50 * (rows + cols)`.
    pub max_iterations: Option<usize>,
    /// Consecutive pivots without progress before switching to Bland's rule.
    pub degeneracy_streak: usize,
    /// Basis updates between refactorizations.
    pub refactor_interval: usize,
    /// Wall-clock deadline; hitting it yields [`LpStatus::IterationLimit`].
    pub deadline: Option<Instant>,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            duality_tol: 1e-7,
            opt_tol: 1e-9,
            pivot_tol: 1e-9,
            max_iterations: None,
            degeneracy_streak: 1000,
            refactor_interval: 100,
            deadline: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// A simplex basis: which variables (structural `0..n`, slack `n..n+m`) are
/// basic, and which nonbasic variables rest at their upper bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basis {
    pub basic: Vec<usize>,
    pub at_upper: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    /// Marginal change of the objective per unit increase of each row's rhs.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub basis: Option<Basis>,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Solves `problem` to optimality or proves infeasibility/unboundedness.
pub fn solve_lp(problem: &LpProblem, tolerances: &SolverTolerances) -> Result<LpSolution> {
    problem.validate()?;
    let simplex = Simplex::new(problem);
    Ok(simplex.solve(&problem.lower, &problem.upper, None, tolerances))
}

/// Like [`solve_lp`] but starting from a previously returned basis.
pub fn solve_lp_warm(
    problem: &LpProblem,
    basis: &Basis,
    tolerances: &SolverTolerances,
) -> Result<LpSolution> {
    problem.validate()?;
    let simplex = Simplex::new(problem);
    Ok(simplex.solve(&problem.lower, &problem.upper, Some(basis), tolerances))
}

/// Optimality residuals of a primal/dual pair, measured in maximization form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub complementary_slackness: f64,
    pub duality_gap: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.primal_infeasibility
            .max(self.dual_infeasibility)
            .max(self.complementary_slackness)
            .max(self.duality_gap)
    }
}

pub fn evaluate_residuals(problem: &LpProblem, solution: &LpSolution) -> Result<ResidualReport> {
    let n = problem.num_vars();
    let m = problem.num_rows();
    if solution.primal.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "solution has {} primal values, problem has {n} variables",
            solution.primal.len()
        )));
    }
    if solution.duals.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "solution has {} duals, problem has {m} rows",
            solution.duals.len()
        )));
    }
    let x = &solution.primal;
    let sign = problem.sense.sign();

    let mut primal_inf = 0.0f64;
    let mut dual_inf = 0.0f64;
    let mut cs = 0.0f64;
    let mut dual_obj = 0.0;

    // Row part; duals rescaled to the maximization of sign * c.
    let mut reduced: Vec<f64> = problem.objective.iter().map(|c| sign * c).collect();
    for (i, row) in problem.rows.iter().enumerate() {
        let act = problem.row_activity(i, x);
        let y = sign * solution.duals[i];
        let viol = match row.relation {
            Relation::Le => (act - row.rhs).max(0.0),
            Relation::Ge => (row.rhs - act).max(0.0),
            Relation::Eq => (act - row.rhs).abs(),
        };
        primal_inf = primal_inf.max(viol);
        match row.relation {
            Relation::Le => dual_inf = dual_inf.max((-y).max(0.0)),
            Relation::Ge => dual_inf = dual_inf.max(y.max(0.0)),
            Relation::Eq => {}
        }
        if row.relation != Relation::Eq {
            cs = cs.max((y * (row.rhs - act)).abs());
        }
        dual_obj += y * row.rhs;
        for &(j, a) in &row.terms {
            reduced[j] -= y * a;
        }
    }
    for j in 0..n {
        let (lo, hi) = (problem.lower[j], problem.upper[j]);
        primal_inf = primal_inf
            .max((lo - x[j]).max(0.0))
            .max((x[j] - hi).max(0.0));
        let d = reduced[j];
        if d > 0.0 {
            if hi.is_finite() {
                dual_obj += d * hi;
                cs = cs.max(d * (hi - x[j]).abs());
            } else {
                dual_inf = dual_inf.max(d);
            }
        } else if d < 0.0 {
            if lo.is_finite() {
                dual_obj += d * lo;
                cs = cs.max(-d * (x[j] - lo).abs());
            } else {
                dual_inf = dual_inf.max(-d);
            }
        }
    }
    let primal_obj = sign * problem.objective_value(x);
    Ok(ResidualReport {
        primal_infeasibility: primal_inf,
        dual_infeasibility: dual_inf,
        complementary_slackness: cs,
        duality_gap: (dual_obj - primal_obj).abs(),
    })
}

#[cfg(test)]
mod tests;
