use std::io::Write;
use std::path::Path;

use anyhow::Result;
use portfolio_bilevel::market_data::InstanceClass;
use portfolio_bilevel::solution::ResultRecord;
use serde::Serialize;

use crate::config::{ExperimentConfig, Method};
use crate::matrix::{groups, in_group, write_csv, write_csv_to, MatrixRecord};

/// Slack allowed when checking that the welfare optimum dominates the sums.
pub const DOMINANCE_TOL: f64 = 1e-8;

/// Per (class, alpha, mu0) averages of the three models over replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub class: InstanceClass,
    pub alpha: f64,
    pub mu0: f64,
    pub blifp_cvar: Option<f64>,
    pub ilbfp_cvar: Option<f64>,
    pub blifp_profit: Option<f64>,
    pub ilbfp_profit: Option<f64>,
    pub blifp_sum: Option<f64>,
    pub ilbfp_sum: Option<f64>,
    pub mswp_sum: Option<f64>,
    pub blifp_expected_return: Option<f64>,
    pub ilbfp_expected_return: Option<f64>,
    pub mswp_expected_return: Option<f64>,
    /// Replicates where all three models were solved to optimality.
    pub replicates_compared: usize,
    /// Welfare optimum at least both sums on every compared replicate.
    pub dominance: Option<bool>,
    /// Report only: BLIFP CVaR at least the ILBFP CVaR on every compared replicate.
    pub blifp_cvar_higher: Option<bool>,
    /// Report only: BLIFP profit at least the ILBFP profit on every compared replicate.
    pub blifp_profit_higher: Option<bool>,
    pub note: String,
}

const HEADER: &[&str] = &[
    "class",
    "alpha",
    "mu0",
    "blifp_cvar",
    "ilbfp_cvar",
    "blifp_profit",
    "ilbfp_profit",
    "blifp_sum",
    "ilbfp_sum",
    "mswp_sum",
    "blifp_expected_return",
    "ilbfp_expected_return",
    "mswp_expected_return",
    "replicates_compared",
    "dominance",
    "blifp_cvar_higher",
    "blifp_profit_higher",
    "note",
];

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// First optimal result among `methods` for one replicate.
fn pick<'a>(
    records: &'a [MatrixRecord],
    g: (InstanceClass, f64, f64),
    replicate: usize,
    methods: &[Method],
) -> Option<&'a ResultRecord> {
    methods.iter().find_map(|&m| {
        in_group(records, g, m)
            .find(|r| r.replicate == replicate && r.solved())
            .and_then(|r| r.result.as_ref())
    })
}

/// Compares the broker-leader, investor-leader and welfare models cell by
/// cell. A model counts as solved in a replicate when any of its methods
/// reached optimality (BLIFP2 before BLIFP1, closed form before cutting
/// plane, MILP before Benders).
pub fn compare_models(config: &ExperimentConfig, records: &[MatrixRecord]) -> Vec<ComparisonRow> {
    const BLIFP: &[Method] = &[Method::Blifp2, Method::Blifp1];
    const ILBFP: &[Method] = &[Method::IlbfpLp, Method::IlbfpCuttingPlane];
    const MSWP: &[Method] = &[Method::MswpMilp, Method::MswpBenders];
    groups(config, records)
        .into_iter()
        .map(|g| {
            let mut blifp = Vec::new();
            let mut ilbfp = Vec::new();
            let mut mswp = Vec::new();
            let mut compared = 0;
            let mut dominance = true;
            let mut cvar_higher = true;
            let mut profit_higher = true;
            for replicate in 0..config.replicates {
                let b = pick(records, g, replicate, BLIFP);
                let i = pick(records, g, replicate, ILBFP);
                let m = pick(records, g, replicate, MSWP);
                blifp.extend(b);
                ilbfp.extend(i);
                mswp.extend(m);
                if let (Some(b), Some(i), Some(m)) = (b, i, m) {
                    compared += 1;
                    let welfare = m.profit + m.cvar;
                    dominance &= welfare >= b.profit + b.cvar - DOMINANCE_TOL
                        && welfare >= i.profit + i.cvar - DOMINANCE_TOL;
                    cvar_higher &= b.cvar >= i.cvar - DOMINANCE_TOL;
                    profit_higher &= b.profit >= i.profit - DOMINANCE_TOL;
                }
            }
            let avg = |rs: &[&ResultRecord], f: fn(&ResultRecord) -> f64| {
                mean(&rs.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            let mut missing = Vec::new();
            for (name, rs) in [("blifp", &blifp), ("ilbfp", &ilbfp), ("mswp", &mswp)] {
                if rs.len() < config.replicates {
                    missing.push(format!("{name} solved {}/{}", rs.len(), config.replicates));
                }
            }
            let verdict = |v: bool| (compared > 0).then_some(v);
            ComparisonRow {
                class: g.0,
                alpha: g.1,
                mu0: g.2,
                blifp_cvar: avg(&blifp, |r| r.cvar),
                ilbfp_cvar: avg(&ilbfp, |r| r.cvar),
                blifp_profit: avg(&blifp, |r| r.profit),
                ilbfp_profit: avg(&ilbfp, |r| r.profit),
                blifp_sum: avg(&blifp, |r| r.profit + r.cvar),
                ilbfp_sum: avg(&ilbfp, |r| r.profit + r.cvar),
                mswp_sum: avg(&mswp, |r| r.profit + r.cvar),
                blifp_expected_return: avg(&blifp, |r| r.expected_return),
                ilbfp_expected_return: avg(&ilbfp, |r| r.expected_return),
                mswp_expected_return: avg(&mswp, |r| r.expected_return),
                replicates_compared: compared,
                dominance: verdict(dominance),
                blifp_cvar_higher: verdict(cvar_higher),
                blifp_profit_higher: verdict(profit_higher),
                note: missing.join("; "),
            }
        })
        .collect()
}

pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    write_csv(path, HEADER, rows)
}

pub fn write_comparison<W: Write>(out: W, rows: &[ComparisonRow]) -> Result<()> {
    write_csv_to(out, HEADER, rows)
}

/// True when every row with at least one compared replicate satisfies the
/// dominance property.
pub fn dominance_holds(rows: &[ComparisonRow]) -> bool {
    rows.iter().all(|r| r.dominance != Some(false))
}
