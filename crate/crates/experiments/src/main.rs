use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use portfolio_bilevel::blifp::{
    build_blifp, initial_big_m, solve_blifp, BilevelLimits, Formulation, ModelSize,
};
use portfolio_bilevel::follower::cvar_by_inspection;
use portfolio_bilevel::ilbfp::{cutting_plane, solve_ilbfp_lp, CuttingPlaneLimits};
use portfolio_bilevel::lp::write_lp_file;
use portfolio_bilevel::market_data::{
    generate_instance, load_returns_csv, net_scenario_returns, read_instance_json,
    save_returns_csv, synthetic_panel, write_instance_json, InstanceClass, InvestorProfile,
    ProblemInstance, ScenarioPanel,
};
use portfolio_bilevel::milp::MilpProblem;
use portfolio_bilevel::mswp::{
    build_mswp_milp, solve_mswp_benders_with, solve_mswp_milp_with, WelfareOptions,
};
use portfolio_bilevel::solution::{ResultRecord, SolveStatus};
use portfolio_bilevel::Error;
use portfolio_bilevel_experiments::compare::{
    compare_models, dominance_holds, write_comparison, write_comparison_csv,
};
use portfolio_bilevel_experiments::matrix::{read_records_jsonl, run_matrix, MatrixRecord};
use portfolio_bilevel_experiments::{ExperimentConfig, Method};
use serde::Serialize;

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_LIMIT: u8 = 3;
const EXIT_INPUT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "bilevel",
    version,
    about = "Bilevel broker/investor portfolio models"
)]
struct Cli {
    /// Log solver progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a chargeable set and cost grids for an instance class.
    GenerateInstance {
        #[command(flatten)]
        panel: PanelArgs,
        #[arg(long, default_value = "G")]
        class: InstanceClass,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Instance JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the scenario panel as CSV.
        #[arg(long)]
        returns_out: Option<PathBuf>,
    },
    /// Broker-leader problem through one of the single-level MILPs.
    SolveBlifp {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        profile: ProfileArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "blifp2")]
        formulation: Formulation,
        /// Initial big-M constant; derived from the data when omitted.
        #[arg(long)]
        big_m: Option<f64>,
        /// Write the MILP at the initial big-M in LP format.
        #[arg(long)]
        dump_lp: Option<PathBuf>,
    },
    /// Investor-leader problem.
    SolveIlbfp {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        profile: ProfileArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = IlbfpMethod::CuttingPlane)]
        method: IlbfpMethod,
    },
    /// Welfare problem, weighted by --xi or unweighted.
    SolveMswp {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        profile: ProfileArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = MswpMethod::Milp)]
        method: MswpMethod,
        /// Weight of the broker profit; unweighted sum when omitted.
        #[arg(long)]
        xi: Option<f64>,
        /// Comma-separated weights; solves one MILP per weight.
        #[arg(long, value_delimiter = ',', conflicts_with = "xi")]
        sweep: Option<Vec<f64>>,
        /// Write the MILP in LP format.
        #[arg(long)]
        dump_lp: Option<PathBuf>,
    },
    /// CVaR of a fixed portfolio's net scenario returns.
    ComputeCvar {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Comma-separated portfolio weights, one per security.
        #[arg(long, value_delimiter = ',', required = true)]
        weights: Vec<f64>,
        /// Comma-separated costs of the chargeable securities; zero when omitted.
        #[arg(long, value_delimiter = ',')]
        costs: Option<Vec<f64>>,
    },
    /// Solve the full experiment matrix and write the CSV tables.
    RunMatrix {
        #[command(flatten)]
        panel: PanelArgs,
        /// JSON configuration; the flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<InstanceClass>>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        mu0s: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Per-cell limit in seconds.
        #[arg(long)]
        time_limit: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-model comparison of a finished matrix.
    Compare {
        /// records.jsonl written by run-matrix.
        #[arg(long)]
        records: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PanelArgs {
    /// Scenario returns CSV; a synthetic panel is drawn when omitted.
    #[arg(long)]
    returns: Option<PathBuf>,
    /// Securities in the synthetic panel.
    #[arg(long, default_value_t = 30)]
    assets: usize,
    /// Scenarios in the synthetic panel.
    #[arg(long, default_value_t = 60)]
    days: usize,
    #[arg(long, default_value_t = 1)]
    panel_seed: u64,
}

impl PanelArgs {
    fn load(&self) -> Result<ScenarioPanel> {
        match &self.returns {
            Some(path) => {
                load_returns_csv(path).with_context(|| format!("reading {}", path.display()))
            }
            None => Ok(synthetic_panel(self.assets, self.days, self.panel_seed)?),
        }
    }
}

#[derive(Args)]
struct InstanceArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Instance JSON; generated from --class and --seed when omitted.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value = "G")]
    class: InstanceClass,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl InstanceArgs {
    fn load(&self) -> Result<ProblemInstance> {
        let panel = self.panel.load()?;
        match &self.instance {
            Some(path) => {
                let file =
                    File::open(path).with_context(|| format!("opening {}", path.display()))?;
                Ok(read_instance_json(io::BufReader::new(file), panel)?)
            }
            None => Ok(generate_instance(self.class, &panel, self.seed)?),
        }
    }
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    mu0: f64,
}

impl ProfileArgs {
    fn profile(&self) -> Result<InvestorProfile> {
        Ok(InvestorProfile::new(self.alpha, self.mu0)?)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Optimality tolerance (MILP gap, cut or Benders tolerance).
    #[arg(long)]
    tol: Option<f64>,
    /// Result JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn limit(&self) -> Result<Option<Duration>> {
        match self.time_limit {
            None => Ok(None),
            Some(t) if t > 0.0 && t.is_finite() => Ok(Some(Duration::from_secs_f64(t))),
            Some(t) => {
                Err(Error::InvalidInput(format!("time limit must be positive, got {t}")).into())
            }
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum IlbfpMethod {
    ClosedForm,
    CuttingPlane,
}

#[derive(Clone, Copy, ValueEnum)]
enum MswpMethod {
    Milp,
    Benders,
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(
                File::create(path).with_context(|| format!("creating {}", path.display()))?,
            );
            serde_json::to_writer_pretty(&mut w, value)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        None => {
            let mut w = io::stdout().lock();
            serde_json::to_writer_pretty(&mut w, value)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn dump(path: &Path, milp: &MilpProblem, comment: &str) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_lp_file(&mut w, &milp.lp, &milp.binaries, comment)?;
    w.flush()?;
    Ok(())
}

fn status_code(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Optimal => 0,
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
        SolveStatus::TimeLimit | SolveStatus::NodeLimit | SolveStatus::IterationLimit => EXIT_LIMIT,
        SolveStatus::CertificateFailure | SolveStatus::Error => 1,
    }
}

#[derive(Serialize)]
struct BlifpOutput {
    #[serde(flatten)]
    record: ResultRecord,
    formulation: Formulation,
    size: ModelSize,
    m_escalations: usize,
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::GenerateInstance {
            panel,
            class,
            seed,
            out,
            returns_out,
        } => {
            let panel = panel.load()?;
            let instance = generate_instance(class, &panel, seed)?;
            if let Some(path) = returns_out {
                save_returns_csv(&path, &panel)?;
            }
            match out {
                Some(path) => write_instance_json(
                    File::create(&path).with_context(|| format!("creating {}", path.display()))?,
                    &instance,
                )?,
                None => write_instance_json(io::stdout().lock(), &instance)?,
            }
            Ok(0)
        }
        Command::SolveBlifp {
            instance,
            profile,
            run,
            formulation,
            big_m,
            dump_lp,
        } => {
            let instance = instance.load()?;
            let profile = profile.profile()?;
            let m0 = big_m.unwrap_or_else(|| initial_big_m(&instance, &profile));
            let (milp, _) = build_blifp(&instance, &profile, formulation, m0)?;
            if let Some(path) = dump_lp {
                dump(&path, &milp, &format!("{formulation}, big-M {m0}"))?;
            }
            let mut limits = BilevelLimits {
                big_m,
                time_limit: run.limit()?,
                ..BilevelLimits::default()
            };
            if let Some(tol) = run.tol {
                limits.milp.mip_gap = tol;
            }
            let s = solve_blifp(&instance, &profile, formulation, &limits)?;
            emit(
                run.out.as_deref(),
                &BlifpOutput {
                    record: s.record(),
                    formulation,
                    size: ModelSize::of(&milp),
                    m_escalations: s.diagnostics.m_escalations,
                },
            )?;
            Ok(status_code(s.status))
        }
        Command::SolveIlbfp {
            instance,
            profile,
            run,
            method,
        } => {
            let instance = instance.load()?;
            let profile = profile.profile()?;
            let s = match method {
                IlbfpMethod::ClosedForm => solve_ilbfp_lp(&instance, &profile)?,
                IlbfpMethod::CuttingPlane => {
                    let mut limits = CuttingPlaneLimits {
                        time_limit: run.limit()?,
                        ..CuttingPlaneLimits::default()
                    };
                    if let Some(tol) = run.tol {
                        limits.cut_tol = tol;
                    }
                    let (s, pool) = cutting_plane(&instance, &profile, &limits)?;
                    let mut record = s.record();
                    record.cuts = Some(pool.cuts.len());
                    emit(run.out.as_deref(), &record)?;
                    return Ok(status_code(s.status));
                }
            };
            emit(run.out.as_deref(), &s.record())?;
            Ok(status_code(s.status))
        }
        Command::SolveMswp {
            instance,
            profile,
            run,
            method,
            xi,
            sweep,
            dump_lp,
        } => {
            let instance = instance.load()?;
            let profile = profile.profile()?;
            let mut options = WelfareOptions {
                time_limit: run.limit()?,
                ..WelfareOptions::default()
            };
            if let Some(tol) = run.tol {
                options.milp.mip_gap = tol;
                options.benders_tol = tol;
            }
            if let Some(path) = &dump_lp {
                let (milp, _) = build_mswp_milp(&instance, &profile, xi)?;
                dump(path, &milp, "welfare MILP")?;
            }
            if let Some(xis) = sweep {
                if !matches!(method, MswpMethod::Milp) {
                    bail!(Error::InvalidInput(
                        "weight sweeps use the MILP method".into()
                    ));
                }
                let mut xis = xis;
                xis.sort_by(f64::total_cmp);
                let mut records = Vec::new();
                let mut code = 0;
                for xi in xis {
                    match solve_mswp_milp_with(&instance, &profile, Some(xi), &options) {
                        Ok(s) => {
                            code = code.max(status_code(s.status));
                            records.push(serde_json::to_value(s.record())?);
                        }
                        Err(e) => {
                            log::warn!("xi = {xi}: {e}");
                            records.push(serde_json::json!({ "xi": xi, "error": e.to_string() }));
                            code = code.max(error_code(&e.into()));
                        }
                    }
                }
                emit(run.out.as_deref(), &records)?;
                return Ok(code);
            }
            let s = match method {
                MswpMethod::Milp => solve_mswp_milp_with(&instance, &profile, xi, &options)?,
                MswpMethod::Benders => {
                    if xi.is_some() {
                        bail!(Error::InvalidInput(
                            "Benders solves the unweighted problem only; drop --xi".into()
                        ));
                    }
                    solve_mswp_benders_with(&instance, &profile, &options)?
                }
            };
            #[derive(Serialize)]
            struct Out {
                #[serde(flatten)]
                record: ResultRecord,
                alternative_split: bool,
                master_trace: Vec<f64>,
            }
            emit(
                run.out.as_deref(),
                &Out {
                    record: s.record(),
                    alternative_split: s.alternative_split,
                    master_trace: s.master_trace,
                },
            )?;
            Ok(status_code(s.status))
        }
        Command::ComputeCvar {
            instance,
            alpha,
            weights,
            costs,
        } => {
            let instance = instance.load()?;
            let p = costs.unwrap_or_else(|| vec![0.0; instance.costs.num_chargeable()]);
            let y =
                net_scenario_returns(&instance.panel, instance.costs.chargeable(), &weights, &p)?;
            let cvar = cvar_by_inspection(&y, instance.panel.probabilities(), alpha)?;
            emit(
                None,
                &serde_json::json!({ "alpha": alpha, "cvar": cvar, "profit": instance.profit(&weights, &p) }),
            )?;
            Ok(0)
        }
        Command::RunMatrix {
            panel,
            config,
            classes,
            replicates,
            alphas,
            mu0s,
            methods,
            time_limit,
            seed,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => serde_json::from_reader(
                    File::open(&path).with_context(|| format!("opening {}", path.display()))?,
                )
                .with_context(|| format!("parsing {}", path.display()))?,
                None => ExperimentConfig::default(),
            };
            cfg.classes = classes.unwrap_or(cfg.classes);
            cfg.replicates = replicates.unwrap_or(cfg.replicates);
            cfg.alphas = alphas.unwrap_or(cfg.alphas);
            cfg.mu0s = mu0s.unwrap_or(cfg.mu0s);
            cfg.methods = methods.unwrap_or(cfg.methods);
            cfg.time_limit_s = time_limit.unwrap_or(cfg.time_limit_s);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.output_dir = out.unwrap_or(cfg.output_dir);
            if let Err(e) = cfg.validate() {
                bail!(Error::InvalidInput(e.to_string()));
            }
            let panel = panel.load()?;
            let output = run_matrix(&cfg, &panel)?;
            fs::write(
                cfg.output_dir.join("config.json"),
                serde_json::to_string_pretty(&cfg)?,
            )?;
            let rows = compare_models(&cfg, &output.records);
            eprintln!(
                "{} runs in {:.1}s; dominance {}; files in {}",
                output.records.len(),
                output.wall_time.as_secs_f64(),
                if dominance_holds(&rows) {
                    "holds"
                } else {
                    "VIOLATED"
                },
                cfg.output_dir.display()
            );
            Ok(0)
        }
        Command::Compare { records, out } => {
            let records = read_records_jsonl(&records)?;
            let cfg = config_from_records(&records);
            let rows = compare_models(&cfg, &records);
            match out {
                Some(path) => write_comparison_csv(&path, &rows)?,
                None => write_comparison(io::stdout().lock(), &rows)?,
            }
            Ok(if dominance_holds(&rows) { 0 } else { 1 })
        }
    }
}

/// The grid a set of records was produced from, in order of first appearance.
fn config_from_records(records: &[MatrixRecord]) -> ExperimentConfig {
    fn push<T: PartialEq>(v: &mut Vec<T>, x: T) {
        if !v.contains(&x) {
            v.push(x);
        }
    }
    let mut cfg = ExperimentConfig {
        classes: Vec::new(),
        alphas: Vec::new(),
        mu0s: Vec::new(),
        methods: Vec::new(),
        replicates: records.iter().map(|r| r.replicate + 1).max().unwrap_or(1),
        ..ExperimentConfig::default()
    };
    for r in records {
        push(&mut cfg.classes, r.class);
        push(&mut cfg.alphas, r.alpha);
        push(&mut cfg.mu0s, r.mu0);
        push(&mut cfg.methods, r.method);
    }
    cfg
}

fn error_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Infeasible(_)) => EXIT_INFEASIBLE,
        Some(Error::LimitReached(_)) => EXIT_LIMIT,
        Some(
            Error::InvalidInput(_)
            | Error::InvalidProblem(_)
            | Error::DimensionMismatch(_)
            | Error::EnumerationCap { .. }
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_),
        ) => EXIT_INPUT,
        Some(_) => 1,
        None if err.downcast_ref::<io::Error>().is_some()
            || err.downcast_ref::<serde_json::Error>().is_some() =>
        {
            EXIT_INPUT
        }
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error_code(&e))
        }
    }
}
