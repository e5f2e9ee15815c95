//! `fragsim`: runs one experiment from a JSON config and writes its report.
//!
//! Exit codes: 0 all verdicts pass, 1 some verdict fails, 2 invalid
//! configuration or output directory, 3 runtime error.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fragsim::experiments::{
    cross_validate_brownian, small_time, stable_immigration, theorem1, theorem2, validate_samplers, ConvergenceReport,
};

use config::{ExperimentConfig, Plan};
use output::{check_output_dir, config_hash, now_unix, write_all, Manifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("run failed: {0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fragsim", version, about = "Run a fragmentation convergence experiment")]
struct Args {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 uses every core).
    #[arg(long, env = "FRAGSIM_THREADS")]
    threads: Option<usize>,
    /// Also write the raw samples as JSON lines.
    #[arg(long)]
    dump_raw: bool,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn execute(plan: Plan) -> fragsim::Result<ConvergenceReport> {
    match plan {
        Plan::Theorem1 { setup, m_grid, probes } => theorem1(&setup, &m_grid, &probes),
        Plan::Theorem2 {
            setup,
            regime,
            scale,
            m_grid,
            probes,
        } => theorem2(&setup, regime, scale, &m_grid, &probes),
        Plan::SmallTime { setup, eps_grid, probes } => small_time(&setup, &eps_grid, &probes),
        Plan::ValidateSamplers {
            n,
            cases,
            jump_floor,
            seed,
        } => validate_samplers(n, cases, jump_floor, seed),
        Plan::CrossValidateBrownian {
            n,
            grid_n,
            t,
            approx,
            seed,
        } => cross_validate_brownian(n, grid_n, t, approx, seed),
        Plan::StableImmigration { pool, n, t, approx, seed } => stable_immigration(pool, n, t, approx, seed),
    }
}

fn run(args: Args) -> Result<bool, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Validation("no output directory: pass --out or set `output_dir`".into()))?;
    // the output location does not change the results
    cfg.output_dir = None;
    let hash = config_hash(&cfg.canonical());
    check_output_dir(&out, &hash)?;
    let plan = cfg.plan()?;

    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    let report = execute(plan).map_err(|e| CliError::Runtime(e.to_string()))?;
    let manifest = Manifest {
        config_sha256: hash,
        seed: cfg.seed,
        experiment: report.experiment.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        created_unix: now_unix(),
        passed: report.passed(),
    };
    write_all(&out, &report, &manifest, args.dump_raw)?;
    for v in &report.verdicts {
        println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.criterion, v.detail);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("fragsim: {e}");
            ExitCode::from(e.code())
        }
    }
}
