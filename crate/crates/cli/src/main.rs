use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tlflr_cli::bench::{run_benchmark, BenchOutput};
use tlflr_cli::config::RunConfig;
use tlflr_cli::error::{CliError, CliResult};
use tlflr_cli::io::{load_curves_csv, write_curves_csv, write_function_csv, write_results_csv};
use tlflr_cli::realdata::run_realdata;
use tlflr_core::adaptive::{adaptive_fit, AdaptiveConfig, CandidateTuning};
use tlflr_core::funcore::{FunctionalDataset, Population};
use tlflr_core::modelsel::{select_and_fit, Estimator};
use tlflr_core::synth::Scenario;

#[derive(Parser)]
#[command(name = "tlflr", version, about = "Transfer learning for functional linear regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one synthetic scenario and write it as curve files.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthFlags,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit FLR or TL-FLR with cross-validated tuning and write the slope.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        /// `flr` or `tl-flr`; defaults to `tl-flr` when sources are given.
        #[arg(long)]
        method: Option<String>,
        /// Slope output file (`t,slope`).
        #[arg(long)]
        out: PathBuf,
    },
    /// Adaptive transfer with sparse aggregation; writes the aggregate slope.
    Adaptive {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        split_fraction: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo comparison on synthetic data; writes a results CSV.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthFlags,
        #[command(flatten)]
        run: RunFlags,
        /// Comma-separated methods: flr, tl-flr, naive, agg.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        split_fraction: Option<f64>,
    },
    /// Train/test prediction study where each sector is the target in turn.
    Realdata {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunFlags,
        /// Sector files (curve CSV or stock CSV).
        #[arg(long, num_args = 1..)]
        sectors: Vec<PathBuf>,
        #[arg(long)]
        grid_len: Option<usize>,
        #[arg(long)]
        test_fraction: Option<f64>,
        #[arg(long)]
        split_fraction: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON file with run settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// Comma-separated truncation levels for cross-validation.
    #[arg(long, value_delimiter = ',')]
    m_grid: Option<Vec<usize>>,
    /// Comma-separated penalties for cross-validation.
    #[arg(long, value_delimiter = ',')]
    tau_grid: Option<Vec<f64>>,
}

#[derive(Args)]
struct SynthFlags {
    /// I, II, III or IV.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_source: Option<usize>,
    /// Number of sources.
    #[arg(long = "L")]
    sources: Option<usize>,
    /// Number of informative sources.
    #[arg(long = "K")]
    informative: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    sigma_eps: Option<f64>,
    /// uniform, gaussian or t5.
    #[arg(long)]
    score_dist: Option<String>,
    #[arg(long)]
    truncation: Option<usize>,
    #[arg(long)]
    grid_len: Option<usize>,
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    reps: Option<usize>,
    /// Record wall-clock milliseconds (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
    /// Results file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataFlags {
    /// Target curve CSV.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Source curve CSVs.
    #[arg(long, num_args = 1..)]
    sources: Vec<PathBuf>,
}

macro_rules! set {
    ($cfg:ident, $($field:ident <- $value:expr),+ $(,)?) => {
        $( if let Some(v) = $value { $cfg.$field = v; } )+
    };
}

fn base_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    set!(cfg, master_seed <- common.seed, folds <- common.folds);
    if common.jobs.is_some() {
        cfg.jobs = common.jobs;
    }
    if common.m_grid.is_some() {
        cfg.m_grid = common.m_grid.clone();
    }
    if common.tau_grid.is_some() {
        cfg.tau_grid = common.tau_grid.clone();
    }
    Ok(cfg)
}

fn apply_synth(cfg: &mut RunConfig, f: SynthFlags) {
    set!(cfg,
        model <- f.model, alpha <- f.alpha, beta <- f.beta, n <- f.n, n_source <- f.n_source,
        sources <- f.sources, informative <- f.informative, h <- f.h, s <- f.s,
        sigma_eps <- f.sigma_eps, score_dist <- f.score_dist, truncation <- f.truncation,
    );
    if f.grid_len.is_some() {
        cfg.grid_len = f.grid_len;
    }
}

fn apply_run(cfg: &mut RunConfig, f: RunFlags) {
    set!(cfg, reps <- f.reps);
    cfg.timing |= f.timing;
    if f.out.is_some() {
        cfg.out = f.out;
    }
}

fn load_inputs(cfg: &mut RunConfig, data: DataFlags) -> CliResult<(FunctionalDataset, Vec<FunctionalDataset>)> {
    if data.target.is_some() {
        cfg.target = data.target;
    }
    if !data.sources.is_empty() {
        cfg.source_files = data.sources;
    }
    let target_path = cfg.target.clone().ok_or_else(|| CliError::Config("--target is required".into()))?;
    let target = load_curves_csv(&target_path, Population::Target)?.data;
    let sources = cfg
        .source_files
        .iter()
        .enumerate()
        .map(|(l, p)| load_curves_csv(p, Population::Source(l)).map(|t| t.data))
        .collect::<CliResult<Vec<_>>>()?;
    Ok((target, sources))
}

fn report_failures(out: &BenchOutput) {
    for (rep, method, msg) in &out.failures {
        eprintln!("warning: rep {rep}, {method}: {msg}");
    }
}

fn results_path(cfg: &RunConfig, default: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn simulate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let scenario = Scenario::generate(&cfg.synthetic(cfg.master_seed)?, grid)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_curves_csv(&out.join("target.csv"), &scenario.target, None)?;
    for (l, s) in scenario.sources.iter().enumerate() {
        write_curves_csv(&out.join(format!("source_{l:02}.csv")), &s.dataset, None)?;
    }
    write_function_csv(&out.join("truth.csv"), &scenario.truth.slope, "slope")?;
    let informative: Vec<String> =
        scenario.sources.iter().enumerate().filter(|(_, s)| s.informative).map(|(l, _)| l.to_string()).collect();
    println!("wrote target and {} sources to {}", scenario.sources.len(), out.display());
    println!("informative sources: [{}]", informative.join(", "));
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { common, synth, out } => {
            let mut cfg = base_config(&common)?;
            apply_synth(&mut cfg, synth);
            simulate(&cfg, &out)
        }
        Command::Fit { common, data, method, out } => {
            let mut cfg = base_config(&common)?;
            let (target, sources) = load_inputs(&mut cfg, data)?;
            let estimator = match method.as_deref().map(str::to_ascii_lowercase).as_deref() {
                Some("flr") => Estimator::Flr,
                Some("tl-flr" | "tlflr") => Estimator::Tlflr,
                Some(other) => return Err(CliError::Config(format!("unknown method '{other}'"))),
                None if sources.is_empty() => Estimator::Flr,
                None => Estimator::Tlflr,
            };
            if estimator == Estimator::Tlflr && sources.is_empty() {
                return Err(CliError::Config("tl-flr needs at least one --sources file".into()));
            }
            let cv = cfg.cv_plan().resolve(target.len(), target.grid().len(), cfg.master_seed)?;
            let (est, report) = cfg.in_pool(|| select_and_fit(&target, &sources, &cv, estimator))??;
            write_function_csv(&out, est.slope_curve(), "slope")?;
            println!("m = {}, tau = {}, cv risk = {}", report.best.m, report.best.tau, report.best_risk());
            println!("intercept: response mean = {}", est.response_mean());
            Ok(())
        }
        Command::Adaptive { common, data, split_fraction, out } => {
            let mut cfg = base_config(&common)?;
            set!(cfg, split_fraction <- split_fraction);
            let (target, sources) = load_inputs(&mut cfg, data)?;
            let config = AdaptiveConfig {
                split_fraction: cfg.split_fraction,
                seed: cfg.master_seed,
                tuning: CandidateTuning::PerCandidate(cfg.cv_plan()),
            };
            let fit = cfg.in_pool(|| adaptive_fit(&target, &sources, &config))??;
            write_function_csv(&out, fit.estimate().slope_curve(), "slope")?;
            let agg = &fit.aggregation;
            println!("zeta: {:?}", fit.candidate_sets.zeta());
            println!("ranking: {:?}", fit.candidate_sets.ranking());
            println!("l1 = {}, l2 = {}, lambda = {}", agg.l1, agg.l2, agg.lambda);
            println!("held-out risks: {:?}", agg.empirical_risks);
            Ok(())
        }
        Command::Bench { common, synth, run, methods, scenario, split_fraction } => {
            let mut cfg = base_config(&common)?;
            apply_synth(&mut cfg, synth);
            apply_run(&mut cfg, run);
            set!(cfg, split_fraction <- split_fraction);
            if methods.is_some() {
                cfg.methods = methods;
            }
            if scenario.is_some() {
                cfg.scenario = scenario;
            }
            let out = run_benchmark(&cfg)?;
            report_failures(&out);
            let path = results_path(&cfg, "results/bench.csv");
            write_results_csv(&path, &out.rows)?;
            println!("wrote {} rows to {}", out.rows.len(), path.display());
            Ok(())
        }
        Command::Realdata { common, run, sectors, grid_len, test_fraction, split_fraction } => {
            let mut cfg = base_config(&common)?;
            apply_run(&mut cfg, run);
            set!(cfg, test_fraction <- test_fraction, split_fraction <- split_fraction);
            if grid_len.is_some() {
                cfg.grid_len = grid_len;
            }
            if !sectors.is_empty() {
                cfg.sectors = sectors;
            }
            let out = run_realdata(&cfg)?;
            report_failures(&out);
            let path = results_path(&cfg, "results/realdata.csv");
            write_results_csv(&path, &out.rows)?;
            println!("wrote {} rows to {}", out.rows.len(), path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
