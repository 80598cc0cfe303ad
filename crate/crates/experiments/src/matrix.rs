use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use log::info;
use portfolio_bilevel::blifp::{
    build_blifp, initial_big_m, solve_blifp, BilevelLimits, Formulation, ModelSize,
};
use portfolio_bilevel::ilbfp::{cutting_plane, solve_ilbfp_lp, CuttingPlaneLimits};
use portfolio_bilevel::market_data::{
    generate_instance, InstanceClass, InvestorProfile, ProblemInstance, ScenarioPanel,
};
use portfolio_bilevel::mswp::{solve_mswp_benders_with, solve_mswp_milp_with, WelfareOptions};
use portfolio_bilevel::solution::{ResultRecord, SolveStatus};
use portfolio_bilevel::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compare::{compare_models, write_comparison_csv};
use crate::config::{ExperimentConfig, Method};

/// Environment variable holding the worker count of the matrix pool.
pub const WORKERS_ENV: &str = "BILEVEL_WORKERS";

/// One solver run. Join key: (class, replicate, alpha, mu0, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub class: InstanceClass,
    pub replicate: usize,
    pub instance_seed: u64,
    pub alpha: f64,
    pub mu0: f64,
    pub method: Method,
    pub status: SolveStatus,
    pub time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ResultRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<ModelSize>,
    /// Cutting-plane master solves or Benders cuts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

impl MatrixRecord {
    pub fn solved(&self) -> bool {
        self.status == SolveStatus::Optimal && self.result.is_some()
    }
}

/// Status a solver error is reported under.
pub fn status_of_error(err: &Error, elapsed: Duration, limit: Option<Duration>) -> SolveStatus {
    match err {
        Error::Infeasible(_) => SolveStatus::Infeasible,
        Error::CertificateFailure(_) => SolveStatus::CertificateFailure,
        Error::LimitReached(_) => {
            if limit.is_some_and(|l| elapsed.as_secs_f64() >= 0.95 * l.as_secs_f64()) {
                SolveStatus::TimeLimit
            } else {
                SolveStatus::IterationLimit
            }
        }
        _ => SolveStatus::Error,
    }
}

struct Outcome {
    result: ResultRecord,
    status: SolveStatus,
    iterations: Option<usize>,
}

fn solve_cell(
    instance: &ProblemInstance,
    profile: &InvestorProfile,
    method: Method,
    limit: Duration,
) -> portfolio_bilevel::Result<Outcome> {
    let outcome = match method {
        Method::Blifp1 | Method::Blifp2 => {
            let f = if method == Method::Blifp1 {
                Formulation::Blifp1
            } else {
                Formulation::Blifp2
            };
            let limits = BilevelLimits {
                time_limit: Some(limit),
                ..BilevelLimits::default()
            };
            let s = solve_blifp(instance, profile, f, &limits)?;
            Outcome {
                result: s.record(),
                status: s.status,
                iterations: Some(s.diagnostics.m_escalations),
            }
        }
        Method::IlbfpLp => {
            let s = solve_ilbfp_lp(instance, profile)?;
            Outcome {
                result: s.record(),
                status: s.status,
                iterations: None,
            }
        }
        Method::IlbfpCuttingPlane => {
            let limits = CuttingPlaneLimits {
                time_limit: Some(limit),
                ..CuttingPlaneLimits::default()
            };
            let (s, pool) = cutting_plane(instance, profile, &limits)?;
            let mut result = s.record();
            result.cuts = Some(pool.cuts.len());
            Outcome {
                result,
                status: s.status,
                iterations: Some(pool.iterations),
            }
        }
        Method::MswpMilp | Method::MswpBenders => {
            let options = WelfareOptions {
                check_alternatives: false,
                time_limit: Some(limit),
                ..WelfareOptions::default()
            };
            let s = if method == Method::MswpMilp {
                solve_mswp_milp_with(instance, profile, None, &options)?
            } else {
                solve_mswp_benders_with(instance, profile, &options)?
            };
            Outcome {
                result: s.record(),
                status: s.status,
                iterations: Some(s.cuts),
            }
        }
    };
    Ok(outcome)
}

/// Runs one method on one instance; failures become status rows.
pub fn run_cell(
    instance: &ProblemInstance,
    replicate: usize,
    profile: InvestorProfile,
    method: Method,
    limit: Duration,
) -> MatrixRecord {
    let start = Instant::now();
    let size = match method {
        Method::Blifp1 | Method::Blifp2 => {
            let f = if method == Method::Blifp1 {
                Formulation::Blifp1
            } else {
                Formulation::Blifp2
            };
            build_blifp(instance, &profile, f, initial_big_m(instance, &profile))
                .ok()
                .map(|(m, _)| ModelSize::of(&m))
        }
        _ => None,
    };
    let outcome = solve_cell(instance, &profile, method, limit);
    let elapsed = start.elapsed();
    let mut record = MatrixRecord {
        class: instance.class.unwrap_or(InstanceClass::A),
        replicate,
        instance_seed: instance.seed.unwrap_or(0),
        alpha: profile.alpha,
        mu0: profile.mu0,
        method,
        status: SolveStatus::Error,
        time_s: elapsed.as_secs_f64(),
        error: None,
        result: None,
        size,
        iterations: None,
    };
    match outcome {
        Ok(o) => {
            record.status = o.status;
            record.result = Some(o.result);
            record.iterations = o.iterations;
        }
        Err(e) => {
            record.status = status_of_error(&e, elapsed, Some(limit));
            record.error = Some(e.to_string());
        }
    }
    record
}

/// Worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Records plus the files written for them.
#[derive(Debug)]
pub struct MatrixOutput {
    pub records: Vec<MatrixRecord>,
    pub files: Vec<PathBuf>,
    pub wall_time: Duration,
}

/// Solves every (class, replicate, alpha, mu0, method) cell and writes
/// `records.jsonl` and the aggregated CSVs into the output directory.
pub fn run_matrix(config: &ExperimentConfig, panel: &ScenarioPanel) -> Result<MatrixOutput> {
    config.validate()?;
    let start = Instant::now();
    let mut instances = Vec::new();
    for &class in &config.classes {
        for replicate in 0..config.replicates {
            let seed = config.instance_seed(class, replicate);
            let inst = generate_instance(class, panel, seed)
                .with_context(|| format!("generating class {class}"))?;
            instances.push((replicate, inst));
        }
    }
    let mut cells = Vec::with_capacity(config.num_runs());
    for (replicate, inst) in &instances {
        for &alpha in &config.alphas {
            for &mu0 in &config.mu0s {
                for &method in &config.methods {
                    cells.push((*replicate, inst, InvestorProfile { alpha, mu0 }, method));
                }
            }
        }
    }
    let limit = Duration::from_secs_f64(config.time_limit_s);
    let workers = worker_count();
    info!("running {} cells on {workers} workers", cells.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?;
    let records: Vec<MatrixRecord> = pool.install(|| {
        cells
            .par_iter()
            .map(|(replicate, inst, profile, method)| {
                let r = run_cell(inst, *replicate, *profile, *method, limit);
                info!(
                    "{} r{} alpha={} mu0={} {}: {} in {:.2}s",
                    r.class, r.replicate, r.alpha, r.mu0, r.method, r.status, r.time_s
                );
                r
            })
            .collect()
    });
    let files = write_outputs(&config.output_dir, config, &records)?;
    Ok(MatrixOutput {
        records,
        files,
        wall_time: start.elapsed(),
    })
}

pub fn write_records_jsonl(path: &Path, records: &[MatrixRecord]) -> Result<()> {
    let mut out =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records_jsonl(path: &Path) -> Result<Vec<MatrixRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    Ok(records)
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// The (class, alpha, mu0) groups holding at least one record, in
/// configuration order.
pub(crate) fn groups(
    config: &ExperimentConfig,
    records: &[MatrixRecord],
) -> Vec<(InstanceClass, f64, f64)> {
    let mut out = Vec::new();
    for &class in &config.classes {
        for &alpha in &config.alphas {
            for &mu0 in &config.mu0s {
                if records
                    .iter()
                    .any(|r| r.class == class && r.alpha == alpha && r.mu0 == mu0)
                {
                    out.push((class, alpha, mu0));
                }
            }
        }
    }
    out
}

pub(crate) fn in_group(
    records: &[MatrixRecord],
    (class, alpha, mu0): (InstanceClass, f64, f64),
    method: Method,
) -> impl Iterator<Item = &MatrixRecord> + Clone {
    records
        .iter()
        .filter(move |r| r.class == class && r.alpha == alpha && r.mu0 == mu0 && r.method == method)
}

/// Average CPU over all runs and the number solved to optimality.
fn cpu_and_solved<'a>(
    runs: impl Iterator<Item = &'a MatrixRecord> + Clone,
) -> (Option<f64>, Option<usize>) {
    let cpu = mean(runs.clone().map(|r| r.time_s));
    (cpu, cpu.map(|_| runs.filter(|r| r.solved()).count()))
}

const TABLE3_HEADER: &[&str] = &[
    "class",
    "alpha",
    "mu0",
    "blifp1_cpu",
    "blifp1_solved",
    "blifp2_cpu",
    "blifp2_solved",
    "blifp1_binaries",
    "blifp1_continuous",
    "blifp1_constraints",
    "blifp2_binaries",
    "blifp2_continuous",
    "blifp2_constraints",
    "blifp2_smaller",
    "blifp2_faster",
];

#[derive(Serialize)]
struct Table3Row {
    class: InstanceClass,
    alpha: f64,
    mu0: f64,
    blifp1_cpu: Option<f64>,
    blifp1_solved: Option<usize>,
    blifp2_cpu: Option<f64>,
    blifp2_solved: Option<usize>,
    blifp1_binaries: Option<f64>,
    blifp1_continuous: Option<f64>,
    blifp1_constraints: Option<f64>,
    blifp2_binaries: Option<f64>,
    blifp2_continuous: Option<f64>,
    blifp2_constraints: Option<f64>,
    /// Report only: BLIFP2 has fewer variables and constraints.
    blifp2_smaller: Option<bool>,
    /// Report only: BLIFP2 average CPU below BLIFP1.
    blifp2_faster: Option<bool>,
}

const TABLE4_HEADER: &[&str] = &[
    "class",
    "alpha",
    "mu0",
    "lp_cpu",
    "lp_solved",
    "cutting_plane_cpu",
    "cutting_plane_solved",
    "cutting_plane_iterations",
];

#[derive(Serialize)]
struct Table4Row {
    class: InstanceClass,
    alpha: f64,
    mu0: f64,
    lp_cpu: Option<f64>,
    lp_solved: Option<usize>,
    cutting_plane_cpu: Option<f64>,
    cutting_plane_solved: Option<usize>,
    cutting_plane_iterations: Option<f64>,
}

const TABLE5_HEADER: &[&str] = &[
    "class",
    "alpha",
    "mu0",
    "milp_cpu",
    "milp_solved",
    "benders_cpu",
    "benders_solved",
    "benders_cuts",
];

#[derive(Serialize)]
struct Table5Row {
    class: InstanceClass,
    alpha: f64,
    mu0: f64,
    milp_cpu: Option<f64>,
    milp_solved: Option<usize>,
    benders_cpu: Option<f64>,
    benders_solved: Option<usize>,
    benders_cuts: Option<f64>,
}

const FIGURE_HEADER: &[&str] = &[
    "class",
    "alpha",
    "mu0",
    "method",
    "solved",
    "cvar",
    "profit",
    "expected_return",
    "profit_plus_cvar",
];

#[derive(Serialize)]
struct FigureRow {
    class: InstanceClass,
    alpha: f64,
    mu0: f64,
    method: Method,
    solved: usize,
    cvar: Option<f64>,
    profit: Option<f64>,
    expected_return: Option<f64>,
    profit_plus_cvar: Option<f64>,
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv_to(file, header, rows)
}

/// Writes `header` then `rows`; the header must list the row fields in order.
pub(crate) fn write_csv_to<W: Write, T: Serialize>(
    out: W,
    header: &[&str],
    rows: &[T],
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn size_means<'a>(runs: impl Iterator<Item = &'a MatrixRecord> + Clone) -> [Option<f64>; 3] {
    let sizes = runs.filter_map(|r| r.size);
    [
        mean(sizes.clone().map(|s| s.binaries as f64)),
        mean(sizes.clone().map(|s| s.continuous as f64)),
        mean(sizes.map(|s| s.constraints() as f64)),
    ]
}

/// Writes `records.jsonl`, `table3.csv`, `table4.csv`, `table5.csv`,
/// `figures.csv` and `comparison.csv`.
pub fn write_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    records: &[MatrixRecord],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let groups = groups(config, records);
    let mut files = Vec::new();

    let path = dir.join("records.jsonl");
    write_records_jsonl(&path, records)?;
    files.push(path);

    let t3: Vec<Table3Row> = groups
        .iter()
        .map(|&g| {
            let one = in_group(records, g, Method::Blifp1);
            let two = in_group(records, g, Method::Blifp2);
            let (blifp1_cpu, blifp1_solved) = cpu_and_solved(one.clone());
            let (blifp2_cpu, blifp2_solved) = cpu_and_solved(two.clone());
            let s1 = size_means(one);
            let s2 = size_means(two);
            let blifp2_smaller = match (s1, s2) {
                ([_, Some(c1), Some(k1)], [_, Some(c2), Some(k2)]) => Some(c2 < c1 && k2 < k1),
                _ => None,
            };
            Table3Row {
                class: g.0,
                alpha: g.1,
                mu0: g.2,
                blifp1_cpu,
                blifp1_solved,
                blifp2_cpu,
                blifp2_solved,
                blifp1_binaries: s1[0],
                blifp1_continuous: s1[1],
                blifp1_constraints: s1[2],
                blifp2_binaries: s2[0],
                blifp2_continuous: s2[1],
                blifp2_constraints: s2[2],
                blifp2_smaller,
                blifp2_faster: blifp1_cpu.zip(blifp2_cpu).map(|(a, b)| b < a),
            }
        })
        .collect();
    let path = dir.join("table3.csv");
    write_csv(&path, TABLE3_HEADER, &t3)?;
    files.push(path);

    let t4: Vec<Table4Row> = groups
        .iter()
        .map(|&g| {
            let (lp_cpu, lp_solved) = cpu_and_solved(in_group(records, g, Method::IlbfpLp));
            let cp = in_group(records, g, Method::IlbfpCuttingPlane);
            let (cutting_plane_cpu, cutting_plane_solved) = cpu_and_solved(cp.clone());
            Table4Row {
                class: g.0,
                alpha: g.1,
                mu0: g.2,
                lp_cpu,
                lp_solved,
                cutting_plane_cpu,
                cutting_plane_solved,
                cutting_plane_iterations: mean(cp.filter_map(|r| r.iterations).map(|i| i as f64)),
            }
        })
        .collect();
    let path = dir.join("table4.csv");
    write_csv(&path, TABLE4_HEADER, &t4)?;
    files.push(path);

    let t5: Vec<Table5Row> = groups
        .iter()
        .map(|&g| {
            let (milp_cpu, milp_solved) = cpu_and_solved(in_group(records, g, Method::MswpMilp));
            let b = in_group(records, g, Method::MswpBenders);
            let (benders_cpu, benders_solved) = cpu_and_solved(b.clone());
            Table5Row {
                class: g.0,
                alpha: g.1,
                mu0: g.2,
                milp_cpu,
                milp_solved,
                benders_cpu,
                benders_solved,
                benders_cuts: mean(b.filter_map(|r| r.iterations).map(|i| i as f64)),
            }
        })
        .collect();
    let path = dir.join("table5.csv");
    write_csv(&path, TABLE5_HEADER, &t5)?;
    files.push(path);

    let mut figures = Vec::new();
    for &g in &groups {
        for &method in &config.methods {
            let solved: Vec<&ResultRecord> = in_group(records, g, method)
                .filter(|r| r.solved())
                .filter_map(|r| r.result.as_ref())
                .collect();
            figures.push(FigureRow {
                class: g.0,
                alpha: g.1,
                mu0: g.2,
                method,
                solved: solved.len(),
                cvar: mean(solved.iter().map(|r| r.cvar)),
                profit: mean(solved.iter().map(|r| r.profit)),
                expected_return: mean(solved.iter().map(|r| r.expected_return)),
                profit_plus_cvar: mean(solved.iter().map(|r| r.profit + r.cvar)),
            });
        }
    }
    let path = dir.join("figures.csv");
    write_csv(&path, FIGURE_HEADER, &figures)?;
    files.push(path);

    let path = dir.join("comparison.csv");
    write_comparison_csv(&path, &compare_models(config, records))?;
    files.push(path);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limit_errors_map_to_statuses() {
        let e = Error::LimitReached("x".into());
        let limit = Some(Duration::from_secs(10));
        assert_eq!(
            status_of_error(&e, Duration::from_secs(10), limit),
            SolveStatus::TimeLimit
        );
        assert_eq!(
            status_of_error(&e, Duration::from_secs(1), limit),
            SolveStatus::IterationLimit
        );
        assert_eq!(
            status_of_error(&Error::Infeasible("x".into()), Duration::ZERO, limit),
            SolveStatus::Infeasible
        );
    }

    #[test]
    fn mean_of_nothing_is_blank() {
        assert_eq!(mean(std::iter::empty()), None);
        assert_eq!(mean([1.0, 3.0]), Some(2.0));
    }
}
