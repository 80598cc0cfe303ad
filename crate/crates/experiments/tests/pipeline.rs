use std::fs;
use std::path::Path;

use portfolio_bilevel::fixtures::tiny1;
use portfolio_bilevel::follower::cvar_by_inspection;
use portfolio_bilevel::market_data::{net_scenario_returns, synthetic_panel, InstanceClass};
use portfolio_bilevel_experiments::compare::write_comparison;
use portfolio_bilevel_experiments::matrix::{read_records_jsonl, run_cell, write_outputs};
use portfolio_bilevel_experiments::{
    compare_models, dominance_holds, run_matrix, ExperimentConfig, Method,
};

const CSVS: [&str; 5] = [
    "table3.csv",
    "table4.csv",
    "table5.csv",
    "figures.csv",
    "comparison.csv",
];

fn minimal(dir: &Path, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        classes: vec![InstanceClass::G],
        replicates: 1,
        alphas: vec![0.5],
        mu0s: vec![0.0],
        time_limit_s: 60.0,
        seed,
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn data_lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

/// Drops the timing columns (named `*cpu*`, `time_s`) from a CSV.
fn without_timing(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let keep: Vec<bool> = header
        .iter()
        .map(|h| !h.contains("cpu") && *h != "time_s" && !h.ends_with("_faster"))
        .collect();
    text.lines()
        .map(|l| {
            l.split(',')
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(c, _)| c)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn minimal_matrix_has_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let config = minimal(dir.path(), 7);
    let panel = synthetic_panel(12, 20, 3).unwrap();
    let out = run_matrix(&config, &panel).unwrap();
    assert_eq!(out.records.len(), Method::ALL.len());
    for m in Method::ALL {
        assert_eq!(
            out.records.iter().filter(|r| r.method == m).count(),
            1,
            "{m}"
        );
    }
    for f in ["table3.csv", "table4.csv", "table5.csv", "comparison.csv"] {
        assert_eq!(data_lines(&dir.path().join(f)), 1, "{f}");
    }
    assert_eq!(
        data_lines(&dir.path().join("figures.csv")),
        Method::ALL.len()
    );
    let back = read_records_jsonl(&dir.path().join("records.jsonl")).unwrap();
    assert_eq!(back, out.records);

    let rows = compare_models(&config, &out.records);
    assert!(dominance_holds(&rows));
    for r in out
        .records
        .iter()
        .filter(|r| r.solved() && matches!(r.method, Method::Blifp1 | Method::Blifp2))
    {
        let res = r.result.as_ref().unwrap();
        let gross = net_scenario_returns(&panel, &[], &res.x, &[]).unwrap();
        let cvar = cvar_by_inspection(&gross, panel.probabilities(), r.alpha).unwrap();
        assert!((res.profit + res.cvar - cvar).abs() <= 1e-8, "{}", r.method);
    }
}

#[test]
fn same_seed_gives_identical_csvs_up_to_timing() {
    let panel = synthetic_panel(12, 20, 3).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_matrix(&minimal(a.path(), 11), &panel).unwrap();
    run_matrix(&minimal(b.path(), 11), &panel).unwrap();
    for f in CSVS {
        assert_eq!(
            without_timing(&a.path().join(f)),
            without_timing(&b.path().join(f)),
            "{f}"
        );
    }
}

#[test]
fn empty_result_set_gives_header_only_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::default();
    write_outputs(dir.path(), &config, &[]).unwrap();
    for f in CSVS {
        assert_eq!(data_lines(&dir.path().join(f)), 0, "{f}");
    }
    let mut buf = Vec::new();
    write_comparison(&mut buf, &compare_models(&config, &[])).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
}

#[test]
fn tiny_micro_matrix_satisfies_dominance() {
    let (inst, profile) = tiny1();
    let limit = std::time::Duration::from_secs(60);
    let records: Vec<_> = Method::ALL
        .iter()
        .map(|&m| run_cell(&inst, 0, profile, m, limit))
        .collect();
    assert!(records.iter().all(|r| r.solved()), "{records:?}");
    let config = ExperimentConfig {
        classes: vec![records[0].class],
        replicates: 1,
        alphas: vec![profile.alpha],
        mu0s: vec![profile.mu0],
        ..ExperimentConfig::default()
    };
    let rows = compare_models(&config, &records);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].dominance, Some(true));
    assert!(
        rows[0].mswp_sum.unwrap()
            >= rows[0].blifp_sum.unwrap().max(rows[0].ilbfp_sum.unwrap()) - 1e-8
    );
}
