//! Small reference instances shared by tests, examples and the acceptance suite.

use rand::seq::index::sample;
use rand::Rng;

use crate::lp::Relation;
use crate::market_data::{
    draw_grid, CostRow, CostStructure, InvestorProfile, ProblemInstance, ScenarioPanel,
};

fn tiny_panel() -> ScenarioPanel {
    ScenarioPanel::uniform(
        vec!["S1".into(), "S2".into()],
        vec![vec![0.10, -0.05], vec![0.02, 0.02]],
    )
    .expect("valid panel")
}

/// Two securities, two equiprobable scenarios, both securities chargeable with
/// grids `{0.01, 0.02}` and `{0.005}`; profile `alpha = 0.5`, `mu0 = 0`.
pub fn tiny1() -> (ProblemInstance, InvestorProfile) {
    let costs = CostStructure::new(vec![0, 1], vec![vec![0.01, 0.02], vec![0.005]], Vec::new())
        .expect("valid grids");
    (
        ProblemInstance::new(tiny_panel(), costs).expect("valid instance"),
        InvestorProfile {
            alpha: 0.5,
            mu0: 0.0,
        },
    )
}

/// The two-security fixture with the second grid widened to `{0.005, 0.015}`
/// and, when `capped`, the coupling row `p1 + p2 <= 0.02`.
pub fn tiny1_extended(capped: bool) -> (ProblemInstance, InvestorProfile) {
    let rows = if capped {
        vec![sum_cap(2, 0.02)]
    } else {
        Vec::new()
    };
    let costs = CostStructure::new(vec![0, 1], vec![vec![0.01, 0.02], vec![0.005, 0.015]], rows)
        .expect("valid grids");
    (
        ProblemInstance::new(tiny_panel(), costs).expect("valid instance"),
        InvestorProfile {
            alpha: 0.5,
            mu0: 0.0,
        },
    )
}

/// The row `sum_j p_j <= cap` over `k` chargeable securities.
pub fn sum_cap(k: usize, cap: f64) -> CostRow {
    CostRow {
        coefficients: vec![1.0; k],
        relation: Relation::Le,
        rhs: cap,
    }
}

/// Size limits for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct RandomSpec {
    pub max_securities: usize,
    pub max_scenarios: usize,
    pub max_grid: usize,
}

impl RandomSpec {
    pub const SMALL: RandomSpec = RandomSpec {
        max_securities: 5,
        max_scenarios: 10,
        max_grid: 3,
    };
}

/// A random instance whose investor problem is feasible for every cost vector:
/// `mu0` never exceeds what the best single security earns at its highest cost
/// (or zero, which the empty portfolio attains).
pub fn random_instance<R: Rng>(
    rng: &mut R,
    spec: RandomSpec,
) -> (ProblemInstance, InvestorProfile) {
    let n = rng.gen_range(2..=spec.max_securities.max(2));
    let t = rng.gen_range(2..=spec.max_scenarios.max(2));
    let returns: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let drift = rng.gen_range(-0.01..0.03);
            let spread = rng.gen_range(0.005..0.06);
            (0..t)
                .map(|_| drift + rng.gen_range(-spread..spread))
                .collect()
        })
        .collect();
    let names = (1..=n).map(|j| format!("S{j}")).collect();
    let panel = ScenarioPanel::uniform(names, returns).expect("valid panel");
    let b = rng.gen_range(1..=n);
    let mut chargeable = sample(rng, n, b).into_vec();
    chargeable.sort_unstable();
    let grids = chargeable
        .iter()
        .map(|_| {
            let count = rng.gen_range(1..=spec.max_grid.max(1));
            draw_grid(rng, count)
        })
        .collect();
    let costs = CostStructure::new(chargeable, grids, Vec::new()).expect("valid grids");
    let instance = ProblemInstance::new(panel, costs).expect("valid instance");
    let alpha = [0.05, 0.1, 0.25, 0.5, 0.9, 1.0][rng.gen_range(0..6)];
    let mu0 = if rng.gen_bool(0.5) {
        0.0
    } else {
        rng.gen_range(0.0..=1.0) * best_attainable(&instance)
    };
    (instance, InvestorProfile { alpha, mu0 })
}

/// Largest mean net return of a single security under maximal costs, floored at zero.
fn best_attainable(instance: &ProblemInstance) -> f64 {
    let cost = instance.cost_per_security(&instance.costs.max_costs());
    (0..instance.panel.num_securities())
        .map(|j| instance.panel.mean_return(j) - cost[j])
        .fold(0.0, f64::max)
}

/// A random coupling row `a . p <= rhs` with `a >= 0`, placed so the
/// cheapest cost vector stays admissible.
pub fn random_cost_row<R: Rng>(rng: &mut R, costs: &CostStructure) -> CostRow {
    let a: Vec<f64> = (0..costs.num_chargeable())
        .map(|_| rng.gen_range(0.0..=1.0))
        .collect();
    let lo: f64 = costs.grids().iter().zip(&a).map(|(g, a)| a * g[0]).sum();
    let hi: f64 = costs
        .grids()
        .iter()
        .zip(&a)
        .map(|(g, a)| a * g[g.len() - 1])
        .sum();
    CostRow {
        coefficients: a,
        relation: Relation::Le,
        rhs: lo + rng.gen_range(0.0..=1.0) * (hi - lo),
    }
}
