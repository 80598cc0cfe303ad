use proptest::prelude::*;

use super::*;

fn tol() -> SolverTolerances {
    SolverTolerances::default()
}

/// Solves a dense square system by Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Best vertex of a bounded LP, found by trying every choice of `n` tight
/// constraints among rows and finite bounds. `None` when no vertex is feasible.
fn vertex_oracle(p: &LpProblem) -> Option<f64> {
    let n = p.num_vars();
    let mut hyper: Vec<(Vec<f64>, f64)> = Vec::new();
    for row in &p.rows {
        let mut a = vec![0.0; n];
        for &(j, v) in &row.terms {
            a[j] = v;
        }
        hyper.push((a, row.rhs));
    }
    for j in 0..n {
        for bound in [p.lower[j], p.upper[j]] {
            if bound.is_finite() {
                let mut a = vec![0.0; n];
                a[j] = 1.0;
                hyper.push((a, bound));
            }
        }
    }
    let k = hyper.len();
    let mut best: Option<f64> = None;
    let mut pick: Vec<usize> = (0..n).collect();
    if n > k {
        return None;
    }
    loop {
        let a = pick.iter().map(|&i| hyper[i].0.clone()).collect();
        let b = pick.iter().map(|&i| hyper[i].1).collect();
        if let Some(x) = solve_dense(a, b) {
            let feasible = (0..n).all(|j| x[j] >= p.lower[j] - 1e-7 && x[j] <= p.upper[j] + 1e-7)
                && p.rows.iter().enumerate().all(|(i, row)| {
                    let act = p.row_activity(i, &x);
                    match row.relation {
                        Relation::Le => act <= row.rhs + 1e-7,
                        Relation::Ge => act >= row.rhs - 1e-7,
                        Relation::Eq => (act - row.rhs).abs() <= 1e-7,
                    }
                });
            if feasible {
                let v = p.sense.sign() * p.objective_value(&x);
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                return best.map(|v| p.sense.sign() * v);
            }
            i -= 1;
            if pick[i] < k - n + i {
                pick[i] += 1;
                for t in i + 1..n {
                    pick[t] = pick[t - 1] + 1;
                }
                break;
            }
        }
    }
}

fn two_var_example() -> LpProblem {
    let mut p = LpProblem::new(Sense::Maximize);
    let a = p.add_var("a", 0.0, f64::INFINITY, 3.0);
    let b = p.add_var("b", 0.0, f64::INFINITY, 2.0);
    p.add_row("cap", [(a, 1.0), (b, 1.0)], Relation::Le, 4.0);
    p.add_row("a_max", [(a, 1.0)], Relation::Le, 2.0);
    p
}

#[test]
fn single_constraint_identity() {
    let mut p = LpProblem::new(Sense::Maximize);
    let x = p.add_var("x", 0.0, f64::INFINITY, 1.0);
    p.add_row("r", [(x, 1.0)], Relation::Le, 1.0);
    let s = solve_lp(&p, &tol()).unwrap();
    assert_eq!(s.status, LpStatus::Optimal);
    assert!((s.primal[0] - 1.0).abs() < 1e-12);
    assert!((s.duals[0] - 1.0).abs() < 1e-12);
    assert!((s.objective - 1.0).abs() < 1e-12);
}

#[test]
fn contradictory_rows_are_infeasible() {
    let mut p = LpProblem::new(Sense::Maximize);
    let x = p.add_var("x", 0.0, f64::INFINITY, 1.0);
    p.add_row("lo", [(x, 1.0)], Relation::Ge, 2.0);
    p.add_row("hi", [(x, 1.0)], Relation::Le, 1.0);
    assert_eq!(solve_lp(&p, &tol()).unwrap().status, LpStatus::Infeasible);
}

#[test]
fn two_variable_example_matches_vertex_enumeration() {
    let p = two_var_example();
    let s = solve_lp(&p, &tol()).unwrap();
    assert_eq!(s.status, LpStatus::Optimal);
    let oracle = vertex_oracle(&p).unwrap();
    assert!((oracle - 10.0).abs() < 1e-12);
    assert!((s.objective - oracle).abs() < 1e-9);
    assert!((s.primal[0] - 2.0).abs() < 1e-9 && (s.primal[1] - 2.0).abs() < 1e-9);
    assert!((s.duals[0] - 2.0).abs() < 1e-9 && (s.duals[1] - 1.0).abs() < 1e-9);
    let r = evaluate_residuals(&p, &s).unwrap();
    assert!(r.duality_gap <= 1e-9);
    assert!(r.max() <= 1e-8);
}

#[test]
fn unbounded_direction_is_reported() {
    let mut p = LpProblem::new(Sense::Maximize);
    let x = p.add_var("x", 0.0, f64::INFINITY, 1.0);
    let y = p.add_var("y", 0.0, f64::INFINITY, 0.0);
    p.add_row("r", [(x, 1.0), (y, -1.0)], Relation::Le, 1.0);
    assert_eq!(solve_lp(&p, &tol()).unwrap().status, LpStatus::Unbounded);
}

#[test]
fn minimization_duals_follow_rhs_sensitivity() {
    // min x + 2y s.t. x + y >= 3, y >= 1  ->  x = 2, y = 1, duals (1, 1)
    let mut p = LpProblem::new(Sense::Minimize);
    let x = p.add_var("x", 0.0, f64::INFINITY, 1.0);
    let y = p.add_var("y", 0.0, f64::INFINITY, 2.0);
    p.add_row("sum", [(x, 1.0), (y, 1.0)], Relation::Ge, 3.0);
    p.add_row("ymin", [(y, 1.0)], Relation::Ge, 1.0);
    let s = solve_lp(&p, &tol()).unwrap();
    assert!((s.objective - 4.0).abs() < 1e-9);
    assert!((s.duals[0] - 1.0).abs() < 1e-9);
    assert!((s.duals[1] - 1.0).abs() < 1e-9);
    assert!(evaluate_residuals(&p, &s).unwrap().max() < 1e-8);
}

#[test]
fn free_variables_and_equalities() {
    // max z s.t. z - x = 0, x <= 5, z free
    let mut p = LpProblem::new(Sense::Maximize);
    let z = p.add_var("z", f64::NEG_INFINITY, f64::INFINITY, 1.0);
    let x = p.add_var("x", f64::NEG_INFINITY, 5.0, 0.0);
    p.add_row("link", [(z, 1.0), (x, -1.0)], Relation::Eq, 0.0);
    let s = solve_lp(&p, &tol()).unwrap();
    assert_eq!(s.status, LpStatus::Optimal);
    assert!((s.objective - 5.0).abs() < 1e-9);
    assert!(evaluate_residuals(&p, &s).unwrap().max() < 1e-8);
}

#[test]
fn perturbed_solution_is_flagged() {
    let p = two_var_example();
    let mut s = solve_lp(&p, &tol()).unwrap();
    s.primal[0] += 1.0;
    let r = evaluate_residuals(&p, &s).unwrap();
    assert!(r.primal_infeasibility >= 1.0 - 1e-8);
}

#[test]
fn residuals_reject_dimension_mismatch() {
    let p = two_var_example();
    let mut s = solve_lp(&p, &tol()).unwrap();
    s.duals.pop();
    assert!(matches!(
        evaluate_residuals(&p, &s),
        Err(Error::DimensionMismatch(_))
    ));
}

#[test]
fn malformed_problem_is_rejected() {
    let mut p = two_var_example();
    p.rows[0].terms.push((7, 1.0));
    assert!(matches!(
        solve_lp(&p, &tol()),
        Err(Error::InvalidProblem(_))
    ));
    let mut q = two_var_example();
    q.lower[0] = 3.0;
    q.upper[0] = 1.0;
    assert!(solve_lp(&q, &tol()).is_err());
}

#[test]
fn iteration_limit_is_reported() {
    let p = two_var_example();
    let t = SolverTolerances {
        max_iterations: Some(0),
        ..tol()
    };
    assert_eq!(solve_lp(&p, &t).unwrap().status, LpStatus::IterationLimit);
}

#[test]
fn warm_start_reproduces_optimum() {
    let p = two_var_example();
    let s = solve_lp(&p, &tol()).unwrap();
    let w = solve_lp_warm(&p, s.basis.as_ref().unwrap(), &tol()).unwrap();
    assert_eq!(w.status, LpStatus::Optimal);
    assert!((w.objective - s.objective).abs() < 1e-12);
    assert_eq!(w.iterations, 0);
}

#[test]
fn degenerate_klee_minty_like_problem_terminates() {
    // Highly degenerate: many constraints through the origin.
    let mut p = LpProblem::new(Sense::Maximize);
    let n = 6;
    let vars: Vec<usize> = (0..n)
        .map(|j| p.add_var(format!("x{j}"), 0.0, f64::INFINITY, 1.0 + j as f64))
        .collect();
    for i in 0..n {
        for k in 0..n {
            if i != k {
                p.add_row(
                    format!("d{i}_{k}"),
                    [(vars[i], 1.0), (vars[k], -1.0)],
                    Relation::Le,
                    0.0,
                );
            }
        }
    }
    p.add_row("cap", vars.iter().map(|&v| (v, 1.0)), Relation::Le, 6.0);
    let t = SolverTolerances {
        degeneracy_streak: 1,
        ..tol()
    };
    let s = solve_lp(&p, &t).unwrap();
    assert_eq!(s.status, LpStatus::Optimal);
    assert!((s.objective - 21.0).abs() < 1e-9);
}

#[test]
fn lp_file_lists_all_sections() {
    let p = two_var_example();
    let mut buf = Vec::new();
    write_lp_file(&mut buf, &p, &[1], "example").unwrap();
    let text = String::from_utf8(buf).unwrap();
    for section in ["Maximize", "Subject To", "Bounds", "Binaries", "End"] {
        assert!(text.contains(section), "missing {section}");
    }
    assert!(text.contains("r0_cap:"));
}

fn small_lp() -> impl Strategy<Value = LpProblem> {
    (1usize..=3, 1usize..=4).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(-5i32..=5, n),
            prop::collection::vec((prop::collection::vec(-4i32..=4, n), 0u8..3, -6i32..=12), m),
            any::<bool>(),
        )
            .prop_map(move |(c, rows, maximize)| {
                let mut p = LpProblem::new(if maximize {
                    Sense::Maximize
                } else {
                    Sense::Minimize
                });
                for (j, cj) in c.iter().enumerate() {
                    p.add_var(format!("x{j}"), 0.0, 10.0, f64::from(*cj));
                }
                for (i, (a, rel, b)) in rows.into_iter().enumerate() {
                    let rel = [Relation::Le, Relation::Ge, Relation::Eq][rel as usize];
                    p.add_row(
                        format!("r{i}"),
                        a.into_iter().enumerate().map(|(j, v)| (j, f64::from(v))),
                        rel,
                        f64::from(b),
                    );
                }
                p
            })
    })
}

proptest! {
    #[test]
    fn random_boxed_lps_match_vertex_oracle(p in small_lp()) {
        let s = solve_lp(&p, &tol()).unwrap();
        match vertex_oracle(&p) {
            Some(best) => {
                prop_assert_eq!(s.status, LpStatus::Optimal);
                prop_assert!((s.objective - best).abs() < 1e-7, "{} vs {}", s.objective, best);
                let r = evaluate_residuals(&p, &s).unwrap();
                prop_assert!(r.primal_infeasibility <= 1e-8 && r.dual_infeasibility <= 1e-8);
                prop_assert!(r.complementary_slackness <= 1e-8 && r.duality_gap <= 1e-7, "{:?}", r);
            }
            None => prop_assert_eq!(s.status, LpStatus::Infeasible),
        }
    }

    #[test]
    fn objective_scaling_is_equivariant(p in small_lp(), k in 0.1f64..20.0) {
        let s = solve_lp(&p, &tol()).unwrap();
        let mut q = p.clone();
        for c in &mut q.objective {
            *c *= k;
        }
        let t = solve_lp(&q, &tol()).unwrap();
        prop_assert_eq!(s.status, t.status);
        if s.is_optimal() {
            prop_assert!((t.objective - k * s.objective).abs() <= 1e-7 * (1.0 + t.objective.abs()));
            // the point returned for one scaling is optimal for the other
            prop_assert!((q.objective_value(&s.primal) - t.objective).abs() <= 1e-7 * (1.0 + t.objective.abs()));
            prop_assert!((p.objective_value(&t.primal) - s.objective).abs() <= 1e-7 * (1.0 + s.objective.abs()));
        }
    }

    #[test]
    fn bland_rule_always_terminates(p in small_lp()) {
        let t = SolverTolerances { degeneracy_streak: 0, ..tol() };
        let s = solve_lp(&p, &t).unwrap();
        prop_assert_ne!(s.status, LpStatus::IterationLimit);
    }
}
