//! Bounded-variable revised primal simplex.
//!
//! Every row `i` gets a slack `s_i` with `a_i x + s_i = b_i`; the slack bounds
//! encode the relation (`<=`: `s >= 0`, `>=`: `s <= 0`, `=`: `s = 0`). Phase 1
//! minimizes the sum of bound violations of the basic variables, phase 2 the
//! (internally minimized) objective. Pricing is Dantzig's rule; after a streak of
//! pivots without objective progress the method switches to Bland's rule until
//! progress resumes. The ratio test is the two-pass Harris variant, except in
//! Bland mode, which takes the exact minimum ratio.

use super::factor::LuFactor;
use super::{Basis, LpProblem, LpSolution, LpStatus, Relation, SolverTolerances};

/// Objective gain (relative in phase 2) below which a pivot makes no progress.
const DEGENERATE_GAIN: f64 = 1e-11;
const BLAND_RATIO_TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Basic,
    Lower,
    Upper,
    Free,
}

/// Column-major copy of an [`LpProblem`], reusable across solves that only
/// differ in variable bounds.
#[derive(Debug, Clone)]
pub(crate) struct Simplex {
    m: usize,
    n: usize,
    col_start: Vec<usize>,
    col_row: Vec<usize>,
    col_val: Vec<f64>,
    /// Minimization costs of the structural variables.
    cost: Vec<f64>,
    objective: Vec<f64>,
    rhs: Vec<f64>,
    slack_lo: Vec<f64>,
    slack_hi: Vec<f64>,
    sign: f64,
}

impl Simplex {
    pub(crate) fn new(problem: &LpProblem) -> Self {
        let n = problem.num_vars();
        let m = problem.num_rows();
        let mut counts = vec![0usize; n + 1];
        for row in &problem.rows {
            for &(j, _) in &row.terms {
                counts[j + 1] += 1;
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let nnz = counts[n];
        let mut fill = counts.clone();
        let mut col_row = vec![0usize; nnz];
        let mut col_val = vec![0.0f64; nnz];
        for (i, row) in problem.rows.iter().enumerate() {
            for &(j, v) in &row.terms {
                col_row[fill[j]] = i;
                col_val[fill[j]] = v;
                fill[j] += 1;
            }
        }
        let sign = problem.sense.sign();
        let (slack_lo, slack_hi) = problem
            .rows
            .iter()
            .map(|r| match r.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            })
            .unzip();
        Self {
            m,
            n,
            col_start: counts,
            col_row,
            col_val,
            cost: problem.objective.iter().map(|c| -sign * c).collect(),
            objective: problem.objective.clone(),
            rhs: problem.rows.iter().map(|r| r.rhs).collect(),
            slack_lo,
            slack_hi,
            sign,
        }
    }

    pub(crate) fn solve(
        &self,
        lower: &[f64],
        upper: &[f64],
        warm: Option<&Basis>,
        tol: &SolverTolerances,
    ) -> LpSolution {
        let mut run = Run::new(self, lower, upper, warm, tol);
        let status = run.iterate();
        run.finish(status)
    }
}

enum Step {
    Flip(f64),
    Pivot {
        pos: usize,
        theta: f64,
        target: f64,
        at_upper: bool,
    },
    Unbounded,
}

struct Run<'a> {
    lp: &'a Simplex,
    tol: &'a SolverTolerances,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    state: Vec<State>,
    head: Vec<usize>,
    factor: LuFactor,
    y: Vec<f64>,
    iterations: usize,
}

fn resting(lo: f64, hi: f64, prefer_upper: bool) -> (State, f64) {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) if prefer_upper => (State::Upper, hi),
        (true, _) => (State::Lower, lo),
        (false, true) => (State::Upper, hi),
        (false, false) => (State::Free, 0.0),
    }
}

impl<'a> Run<'a> {
    fn new(
        lp: &'a Simplex,
        lower: &[f64],
        upper: &[f64],
        warm: Option<&Basis>,
        tol: &'a SolverTolerances,
    ) -> Self {
        let (m, n) = (lp.m, lp.n);
        let total = n + m;
        let mut lo = Vec::with_capacity(total);
        lo.extend_from_slice(lower);
        lo.extend_from_slice(&lp.slack_lo);
        let mut hi = Vec::with_capacity(total);
        hi.extend_from_slice(upper);
        hi.extend_from_slice(&lp.slack_hi);

        let head: Vec<usize> = match warm {
            Some(b) if valid_basis(b, m, total) => b.basic.clone(),
            _ => (n..total).collect(),
        };
        let mut state = vec![State::Lower; total];
        let mut x = vec![0.0; total];
        for &v in &head {
            state[v] = State::Basic;
        }
        for j in 0..total {
            if state[j] == State::Basic {
                continue;
            }
            let prefer_upper = warm
                .filter(|b| b.at_upper.len() == total)
                .is_some_and(|b| b.at_upper[j]);
            let (s, v) = resting(lo[j], hi[j], prefer_upper);
            state[j] = s;
            x[j] = v;
        }
        let mut run = Run {
            lp,
            tol,
            lo,
            hi,
            x,
            state,
            head,
            factor: LuFactor::new(0, &[]).factor,
            y: vec![0.0; m],
            iterations: 0,
        };
        run.refactor();
        run
    }

    fn column(&self, j: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        if j < self.lp.n {
            let (a, b) = (self.lp.col_start[j], self.lp.col_start[j + 1]);
            out.extend(
                self.lp.col_row[a..b]
                    .iter()
                    .copied()
                    .zip(self.lp.col_val[a..b].iter().copied()),
            );
        } else {
            out.push((j - self.lp.n, 1.0));
        }
    }

    fn dot_column(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.lp.n {
            let (a, b) = (self.lp.col_start[j], self.lp.col_start[j + 1]);
            self.lp.col_row[a..b]
                .iter()
                .zip(&self.lp.col_val[a..b])
                .map(|(&r, &v)| y[r] * v)
                .sum()
        } else {
            y[j - self.lp.n]
        }
    }

    fn cost_of(&self, j: usize) -> f64 {
        if j < self.lp.n {
            self.lp.cost[j]
        } else {
            0.0
        }
    }

    fn refactor(&mut self) {
        let m = self.lp.m;
        let mut cols = Vec::with_capacity(m);
        let mut buf = Vec::new();
        for &v in &self.head {
            self.column(v, &mut buf);
            cols.push(buf.clone());
        }
        let fz = LuFactor::new(m, &cols);
        for &(pos, row) in &fz.replaced {
            let old = self.head[pos];
            let (s, v) = resting(self.lo[old], self.hi[old], false);
            self.state[old] = s;
            self.x[old] = v;
            let slack = self.lp.n + row;
            self.head[pos] = slack;
            self.state[slack] = State::Basic;
        }
        self.factor = fz.factor;
        self.recompute_basic();
    }

    fn recompute_basic(&mut self) {
        let m = self.lp.m;
        let mut r = self.lp.rhs.clone();
        for j in 0..self.lp.n {
            if self.state[j] == State::Basic || self.x[j] == 0.0 {
                continue;
            }
            let xj = self.x[j];
            let (a, b) = (self.lp.col_start[j], self.lp.col_start[j + 1]);
            for k in a..b {
                r[self.lp.col_row[k]] -= self.lp.col_val[k] * xj;
            }
        }
        for i in 0..m {
            let j = self.lp.n + i;
            if self.state[j] != State::Basic {
                r[i] -= self.x[j];
            }
        }
        let mut xb = vec![0.0; m];
        self.factor.ftran(&mut r, &mut xb);
        for (p, &v) in self.head.iter().enumerate() {
            self.x[v] = xb[p];
        }
    }

    fn out_of_time(&self) -> bool {
        self.tol
            .deadline
            .is_some_and(|d| std::time::Instant::now() >= d)
    }

    fn iterate(&mut self) -> LpStatus {
        let (m, n) = (self.lp.m, self.lp.n);
        let total = m + n;
        let max_iter = self.tol.max_iterations.unwrap_or(50 * total);
        let feas = self.tol.feas_tol;
        let mut cb = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        let mut rejected = vec![false; total];
        let mut any_rejected = false;
        let mut streak = 0usize;
        let mut bland = false;
        let mut rechecks = 0usize;
        let mut buf = Vec::new();
        let mut best = f64::INFINITY;
        let mut step;

        loop {
            if self.factor.num_updates() >= self.tol.refactor_interval {
                self.refactor();
            }
            let mut phase1 = false;
            for (p, &v) in self.head.iter().enumerate() {
                let xv = self.x[v];
                cb[p] = if xv < self.lo[v] - feas {
                    phase1 = true;
                    -1.0
                } else if xv > self.hi[v] + feas {
                    phase1 = true;
                    1.0
                } else {
                    0.0
                };
            }
            if !phase1 {
                for (p, &v) in self.head.iter().enumerate() {
                    cb[p] = self.cost_of(v);
                }
            }
            self.y.iter_mut().for_each(|v| *v = 0.0);
            self.factor.btran(&mut cb, &mut self.y);

            let entering = self.price(phase1, bland, &rejected);
            let Some((q, dir, rate)) = entering else {
                if any_rejected {
                    rejected.iter_mut().for_each(|r| *r = false);
                    any_rejected = false;
                    if rechecks < 5 {
                        rechecks += 1;
                        self.refactor();
                        continue;
                    }
                }
                if phase1 {
                    if self.factor.num_updates() > 0 && rechecks < 5 {
                        rechecks += 1;
                        self.refactor();
                        continue;
                    }
                    return LpStatus::Infeasible;
                }
                if self.factor.num_updates() > 0 && rechecks < 5 {
                    rechecks += 1;
                    self.refactor();
                    continue;
                }
                return LpStatus::Optimal;
            };

            if self.iterations >= max_iter
                || (self.iterations.is_multiple_of(32) && self.out_of_time())
            {
                return LpStatus::IterationLimit;
            }

            rhs.iter_mut().for_each(|v| *v = 0.0);
            self.column(q, &mut buf);
            for &(r, v) in &buf {
                rhs[r] = v;
            }
            self.factor.ftran(&mut rhs, &mut alpha);

            match self.ratio_test(q, dir, &alpha, phase1, bland) {
                Step::Unbounded => {
                    if !phase1 && self.factor.num_updates() == 0 {
                        return LpStatus::Unbounded;
                    }
                    rejected[q] = true;
                    any_rejected = true;
                    if self.factor.num_updates() > 0 {
                        self.refactor();
                    }
                    continue;
                }
                Step::Flip(theta) => {
                    step = theta;
                    self.x[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                    self.state[q] = if dir > 0.0 {
                        State::Upper
                    } else {
                        State::Lower
                    };
                    for (p, &v) in self.head.iter().enumerate() {
                        self.x[v] -= dir * alpha[p] * theta;
                    }
                }
                Step::Pivot {
                    pos,
                    theta,
                    target,
                    at_upper,
                } => {
                    self.x[q] += dir * theta;
                    for (p, &v) in self.head.iter().enumerate() {
                        self.x[v] -= dir * alpha[p] * theta;
                    }
                    let leaving = self.head[pos];
                    self.x[leaving] = target;
                    self.state[leaving] = if at_upper { State::Upper } else { State::Lower };
                    self.head[pos] = q;
                    self.state[q] = State::Basic;
                    self.factor.update(pos, &alpha);
                    step = theta;
                }
            }
            // Phase 2 progress is measured against the best objective so far:
            // tiny steps and drift near bounds can otherwise cycle without a
            // single zero-length pivot.
            let progress = if phase1 {
                best = f64::INFINITY;
                step * rate >= DEGENERATE_GAIN
            } else {
                let obj: f64 = (0..n).map(|j| self.cost_of(j) * self.x[j]).sum();
                let gained = obj < best - DEGENERATE_GAIN * (1.0 + best.abs().min(1e12));
                best = best.min(obj);
                gained
            };
            if progress {
                streak = 0;
                bland = false;
            } else {
                streak += 1;
                if streak >= self.tol.degeneracy_streak {
                    bland = true;
                }
            }
            if any_rejected {
                rejected.iter_mut().for_each(|r| *r = false);
                any_rejected = false;
            }
            self.iterations += 1;
        }
    }

    /// Chooses an entering variable and its direction of movement.
    fn price(&self, phase1: bool, bland: bool, rejected: &[bool]) -> Option<(usize, f64, f64)> {
        let opt = self.tol.opt_tol;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.state.len() {
            let st = self.state[j];
            if st == State::Basic || rejected[j] {
                continue;
            }
            let c = if phase1 { 0.0 } else { self.cost_of(j) };
            let d = c - self.dot_column(j, &self.y);
            let dir = match st {
                State::Lower if self.hi[j] > self.lo[j] && d < -opt => 1.0,
                State::Upper if self.hi[j] > self.lo[j] && d > opt => -1.0,
                State::Free if d.abs() > opt => -d.signum(),
                _ => continue,
            };
            if bland {
                return Some((j, dir, d.abs()));
            }
            if d.abs() > best_score {
                best_score = d.abs();
                best = Some((j, dir, d.abs()));
            }
        }
        best
    }

    /// Distance the basic variable `v` may travel at `rate` per unit step:
    /// `(exact, relaxed, target, target_is_upper)`.
    fn limit(&self, v: usize, rate: f64, phase1: bool) -> Option<(f64, f64, f64, bool)> {
        let feas = self.tol.feas_tol;
        let (xv, lo, hi) = (self.x[v], self.lo[v], self.hi[v]);
        let below = phase1 && xv < lo - feas;
        let above = phase1 && xv > hi + feas;
        if rate < 0.0 {
            let s = -rate;
            if above {
                Some(((xv - hi) / s, (xv - hi + feas) / s, hi, true))
            } else if lo.is_finite() && !below {
                Some(((xv - lo) / s, (xv - lo + feas) / s, lo, false))
            } else {
                None
            }
        } else {
            if below {
                Some(((lo - xv) / rate, (lo - xv + feas) / rate, lo, false))
            } else if hi.is_finite() && !above {
                Some(((hi - xv) / rate, (hi - xv + feas) / rate, hi, true))
            } else {
                None
            }
        }
    }

    fn ratio_test(&self, q: usize, dir: f64, alpha: &[f64], phase1: bool, bland: bool) -> Step {
        let ptol = self.tol.pivot_tol;
        let mut theta_max = f64::INFINITY;
        for (p, &a) in alpha.iter().enumerate() {
            if a.abs() <= ptol {
                continue;
            }
            if let Some((exact, relaxed, _, _)) = self.limit(self.head[p], -dir * a, phase1) {
                // Bland's rule needs the exact minimum ratio to keep its termination guarantee.
                let bound = if bland {
                    exact + BLAND_RATIO_TIE
                } else {
                    relaxed
                };
                theta_max = theta_max.min(bound.max(0.0));
            }
        }
        let flip = self.hi[q] - self.lo[q];
        if flip.is_finite() && flip <= theta_max {
            return Step::Flip(flip);
        }
        if theta_max == f64::INFINITY {
            return Step::Unbounded;
        }
        let mut chosen: Option<(usize, f64, f64, bool)> = None;
        let mut chosen_mag = 0.0;
        for (p, &a) in alpha.iter().enumerate() {
            if a.abs() <= ptol {
                continue;
            }
            let v = self.head[p];
            let Some((exact, _, target, at_upper)) = self.limit(v, -dir * a, phase1) else {
                continue;
            };
            if exact > theta_max {
                continue;
            }
            let better = match chosen {
                None => true,
                Some((cp, ..)) if bland => v < self.head[cp],
                Some((cp, ..)) => {
                    a.abs() > chosen_mag || (a.abs() == chosen_mag && v < self.head[cp])
                }
            };
            if better {
                chosen = Some((p, exact.max(0.0), target, at_upper));
                chosen_mag = a.abs();
            }
        }
        match chosen {
            Some((pos, theta, target, at_upper)) => Step::Pivot {
                pos,
                theta,
                target,
                at_upper,
            },
            None => Step::Unbounded,
        }
    }

    fn finish(self, status: LpStatus) -> LpSolution {
        let n = self.lp.n;
        let primal = self.x[..n].to_vec();
        let objective = self
            .lp
            .objective
            .iter()
            .zip(&primal)
            .map(|(c, v)| c * v)
            .sum();
        let duals = if status == LpStatus::Optimal {
            self.y.iter().map(|&v| -self.lp.sign * v).collect()
        } else {
            vec![0.0; self.lp.m]
        };
        let at_upper = self.state.iter().map(|&s| s == State::Upper).collect();
        LpSolution {
            status,
            primal,
            duals,
            objective,
            iterations: self.iterations,
            basis: Some(Basis {
                basic: self.head,
                at_upper,
            }),
        }
    }
}

fn valid_basis(b: &Basis, m: usize, total: usize) -> bool {
    if b.basic.len() != m {
        return false;
    }
    let mut seen = vec![false; total];
    for &v in &b.basic {
        if v >= total || seen[v] {
            return false;
        }
        seen[v] = true;
    }
    true
}
