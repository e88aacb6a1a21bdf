//! `eqpk` command line: collect, train, eval, check, report.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use eqpk::checks::{run_checks, Suite};
use eqpk::dataset::Dataset;
use eqpk::harness::{self, ExperimentConfig, MetricsRecord};
use eqpk::policy::{PolicyBundle, TrainingSet};
use eqpk::Error;

const DATASET_FILE: &str = "dataset.eqds";
const CHECKPOINT_FILE: &str = "checkpoint.eqcp";

#[derive(Parser)]
#[command(name = "eqpk", version, about = "Symmetry-aware diffusion policies on a planar manipulation sim")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Record scripted demonstrations into a dataset file.
    Collect {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the first entry of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a policy on a dataset and write a checkpoint plus train.log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dataset file (defaults to <out>/dataset.eqds).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Continue from this checkpoint up to the configured step count.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many total steps (the schedule still spans train_steps).
        #[arg(long)]
        until: Option<usize>,
    },
    /// Roll out a checkpoint under the evaluation transforms.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Checkpoint file (defaults to <out>/checkpoint.eqcp).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run invariant suites; exits 1 naming any failing suite.
    Check {
        /// se3, actions, groups, grads, equivariance or all.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, hide = true, default_value_t = 1.0)]
        tolerance_scale: f64,
    },
    /// Merge metrics files into report.csv and summary.csv.
    Report {
        metrics: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

/// An error plus the exit code it maps to.
struct Failure(u8, String);

impl Failure {
    fn new(code: u8, e: impl std::fmt::Display) -> Self {
        Failure(code, e.to_string())
    }
}

/// Exit codes shared by every command; command-specific ones are mapped by
/// the caller first.
fn common_code(e: &Error) -> u8 {
    match e {
        Error::BadConfig(_) => 2,
        Error::Unsolvable(_) => 3,
        Error::WrongKind { .. } => 4,
        Error::NonFinite(_) => 5,
        _ => 1,
    }
}

fn fail(e: Error) -> Failure {
    Failure::new(common_code(&e), e)
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<(ExperimentConfig, u64), Failure> {
    let mut cfg = ExperimentConfig::load(path).map_err(fail)?;
    if let Some(s) = seed {
        cfg.seeds[0] = s;
    }
    let seed = cfg.seeds[0];
    Ok((cfg, seed))
}

fn out_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<PathBuf, Failure> {
    let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| Failure::new(1, format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn collect(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let (cfg, seed) = load_config(config, seed)?;
    let dir = out_dir(&cfg, out)?;
    let ds = harness::collect(&cfg, seed).map_err(fail)?;
    let path = dir.join(DATASET_FILE);
    let sha = ds.write(&path).map_err(fail)?;
    println!("episodes {}  steps {}  sha256 {sha}", ds.episodes.len(), ds.n_steps());
    println!("wrote {}", path.display());
    Ok(())
}

fn train(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    dataset: Option<PathBuf>,
    resume: Option<PathBuf>,
    until: Option<usize>,
) -> Result<(), Failure> {
    let (cfg, seed) = load_config(config, seed)?;
    let until = until.unwrap_or(cfg.train_steps);
    let dir = out_dir(&cfg, out)?;
    let ds_path = dataset.unwrap_or_else(|| dir.join(DATASET_FILE));
    let ds = Dataset::read(&ds_path).map_err(|e| Failure::new(common_code(&e), format!("{}: {e}", ds_path.display())))?;
    let log_path = dir.join("train.log");
    let mut log = std::fs::File::create(&log_path).map_err(|e| fail(e.into()))?;
    let outcome = match resume {
        None => harness::train_until(&cfg, seed, &ds, until, &mut log).map_err(fail)?,
        Some(ck) => {
            let bundle = PolicyBundle::read(&ck).map_err(|e| Failure::new(6, e))?;
            harness::check_compatible(&cfg, &bundle).map_err(|e| Failure::new(6, e))?;
            let set = TrainingSet::new(&bundle, &ds).map_err(fail)?;
            harness::train_more(&cfg, bundle, &set, until, &mut log).map_err(fail)?
        }
    };
    let path = dir.join(CHECKPOINT_FILE);
    let sha = outcome.bundle.write(&path).map_err(fail)?;
    println!(
        "steps {}  initial loss {:.6}  final loss {:.6}  sha256 {sha}",
        outcome.bundle.step(),
        outcome.initial_loss,
        outcome.final_loss
    );
    println!("wrote {} and {}", path.display(), log_path.display());
    Ok(())
}

fn eval(config: &Path, seed: Option<u64>, out: Option<PathBuf>, checkpoint: Option<PathBuf>) -> Result<(), Failure> {
    let (cfg, _) = load_config(config, seed)?;
    let dir = out_dir(&cfg, out)?;
    let ck = checkpoint.unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
    let incompatible = |e: Error| match e {
        Error::Io(_) | Error::Format(_) | Error::Json(_) | Error::ShapeMismatch(_) => Failure::new(6, e),
        other => fail(other),
    };
    let bundle = PolicyBundle::read(&ck).map_err(incompatible)?;
    harness::check_compatible(&cfg, &bundle).map_err(incompatible)?;
    let start = Instant::now();
    let rec = harness::evaluate(&cfg, bundle.config().seed, &bundle).map_err(fail)?;
    let wall = start.elapsed().as_secs_f64();
    let metrics = dir.join("metrics.json");
    std::fs::write(&metrics, rec.to_json()).map_err(|e| fail(e.into()))?;
    let timing = serde_json::json!({ "eval_wall_seconds": wall, "threads": harness::eval_threads() });
    std::fs::write(dir.join("timing.json"), format!("{timing:#}\n")).map_err(|e| fail(e.into()))?;
    println!(
        "success {:.3} (identity {:.3})  equivariance error {:.2e} ({})",
        rec.success_rate, rec.success_rate_identity, rec.equivariance_error, rec.equivariance_case
    );
    for t in &rec.transforms {
        println!("  rz {:>6.1} deg  {}/{}", t.angle.to_degrees(), t.successes, t.episodes);
    }
    println!("wrote {}", metrics.display());
    Ok(())
}

fn check(scope: &str, tolerance_scale: f64) -> Result<(), Failure> {
    let suites = Suite::parse_scope(scope).map_err(fail)?;
    let report = run_checks(&suites, tolerance_scale).map_err(fail)?;
    print!("{}", report.table());
    let failing = report.failing_suites();
    if failing.is_empty() {
        println!("all {} suite(s) passed", suites.len());
        return Ok(());
    }
    let names: Vec<&str> = failing.iter().map(|s| s.as_str()).collect();
    Err(Failure::new(1, format!("failing suite(s): {}", names.join(", "))))
}

fn report(files: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let schema = |e: String| Failure::new(7, e);
    let mut records = Vec::with_capacity(files.len());
    for f in files {
        let text = std::fs::read_to_string(f).map_err(|e| schema(format!("{}: {e}", f.display())))?;
        records.push(MetricsRecord::from_json(&text).map_err(|e| schema(format!("{}: {e}", f.display())))?);
    }
    let (rows, summary) = harness::report_csv(&records).map_err(|e| schema(e.to_string()))?;
    std::fs::create_dir_all(out).map_err(|e| fail(e.into()))?;
    std::fs::write(out.join("report.csv"), &rows).map_err(|e| fail(e.into()))?;
    std::fs::write(out.join("summary.csv"), &summary).map_err(|e| fail(e.into()))?;
    print!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Collect { config, seed, out } => collect(&config, seed, out),
        Cmd::Train {
            config,
            seed,
            out,
            dataset,
            resume,
            until,
        } => train(&config, seed, out, dataset, resume, until),
        Cmd::Eval {
            config,
            seed,
            out,
            checkpoint,
        } => eval(&config, seed, out, checkpoint),
        Cmd::Check { scope, tolerance_scale } => check(&scope, tolerance_scale),
        Cmd::Report { metrics, out } => report(&metrics, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
