//! `trunc-sa` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 runtime error
//! (including poisoned trajectories), 4 special-function bound failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::diagnostics::{diagnose, SquaredNorm};
use crate::engine::{run_with, NoHook, RecordPlan};
use crate::error::SaError;
use crate::harness::replicate;
use crate::json;
use crate::specfun::{check_bounds, log_grid, PositiveReal};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_BOUNDS: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "trunc-sa", version, about = "Truncated stochastic approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one trajectory and write it as CSV.
    Run(Common),
    /// Run independent replications and summarize errors at checkpoints.
    Replicate(Common),
    /// Run one trajectory with the condition monitors attached.
    Diagnose(Common),
    /// Check the digamma/trigamma bounds on a grid.
    SpecfunCheck(SpecfunArgs),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SpecfunArgs {
    #[arg(long, default_value_t = 1e-3)]
    lo: f64,
    #[arg(long, default_value_t = 1e3)]
    hi: f64,
    /// Log-spaced points between `lo` and `hi`.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Explicit points, replacing the log grid.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    points: Vec<f64>,
    /// Also write `specfun.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: serde_json::Value,
    outputs: Vec<String>,
}

/// A failure carrying its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self { code: EXIT_RUNTIME, message: format!("{}: {e}", path.display()) }
    }

    /// One-line JSON so scripts can parse the failure.
    fn runtime(e: &SaError) -> Self {
        let kind = match e {
            SaError::Poisoned { .. } => "poisoned",
            SaError::Schedule { .. } => "schedule",
            SaError::Diagnostics(_) => "diagnostics",
            _ => "runtime",
        };
        let body = json!({ "error": kind, "t": e.step(), "message": e.to_string() });
        Self { code: EXIT_RUNTIME, message: body.to_string() }
    }
}

type CliResult = std::result::Result<i32, Failure>;

/// Parses `args` (program name first) and runs the subcommand.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run(c) => cmd_run(&c),
        Command::Replicate(c) => cmd_replicate(&c),
        Command::Diagnose(c) => cmd_diagnose(&c),
        Command::SpecfunCheck(a) => cmd_specfun_check(&a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("{}", f.message);
            f.code
        }
    }
}

fn load(common: &Common) -> std::result::Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = ExperimentConfig::load(&common.config).map_err(|e| Failure::config(e.to_string()))?;
    if let Some(seed) = common.seed {
        if seed > i64::MAX as u64 {
            return Err(Failure::config(format!("--seed must be below 2^63, got {seed}")));
        }
        cfg = cfg.with_seed(seed);
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&out).map_err(|e| Failure::io(&out, e))?;
    Ok((cfg, out))
}

fn write(dir: &Path, name: &str, contents: &str, outputs: &mut Vec<String>) -> std::result::Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::io(&path, e))?;
    outputs.push(name.to_owned());
    Ok(())
}

fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, outputs: Vec<String>) -> std::result::Result<(), Failure> {
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg.to_json(),
        outputs,
    };
    let text = json::to_string(&m).expect("manifest serializes");
    let path = dir.join("manifest.json");
    fs::write(&path, text).map_err(|e| Failure::io(&path, e))
}

fn cmd_run(common: &Common) -> CliResult {
    let (cfg, out) = load(common)?;
    let problem = cfg.build_problem().map_err(|e| Failure::config(e.to_string()))?;
    let z0 = cfg.init.draw(problem.dim(), cfg.seed, 0).map_err(|e| Failure::config(e.to_string()))?;
    let traj = run_with(&problem, z0, cfg.horizon, cfg.seed, 0, &RecordPlan::Every(cfg.record_every), &mut NoHook)
        .map_err(|e| Failure::runtime(&e))?;
    let mut outputs = Vec::new();
    write(&out, "trajectory.csv", &traj.to_csv(), &mut outputs)?;
    write_manifest(&out, "run", &cfg, outputs)?;
    println!("wrote {} rows to {}", traj.rows.len(), out.join("trajectory.csv").display());
    Ok(EXIT_OK)
}

fn cmd_replicate(common: &Common) -> CliResult {
    let (cfg, out) = load(common)?;
    let problem = cfg.build_problem().map_err(|e| Failure::config(e.to_string()))?;
    let report = replicate(&problem, &cfg.replication_spec()).map_err(|e| Failure::runtime(&e))?;
    let mut outputs = Vec::new();
    let summary = json!({ "config": cfg.to_json(), "summary": report });
    write(&out, "summary.json", &json::to_string(&summary).expect("summary serializes"), &mut outputs)?;
    write(&out, "summary.txt", &report.to_text(), &mut outputs)?;
    if cfg.replicate.csv {
        write(&out, "replications.csv", &report.to_csv(), &mut outputs)?;
    }
    write_manifest(&out, "replicate", &cfg, outputs)?;
    print!("{}", report.to_text());
    if report.failures > 0 {
        let failed: Vec<String> = report
            .replications
            .iter()
            .filter_map(|r| r.failure.as_ref().map(|f| format!("rep {} (seed {}, stream {}): {f}", r.rep, r.seed, r.stream)))
            .collect();
        return Err(Failure { code: EXIT_RUNTIME, message: failed.join("\n") });
    }
    Ok(EXIT_OK)
}

fn cmd_diagnose(common: &Common) -> CliResult {
    let (cfg, out) = load(common)?;
    if !cfg.diagnostics.enabled {
        return Err(Failure::config("diagnostics.enabled must be true for `diagnose`"));
    }
    let problem = cfg.build_problem().map_err(|e| Failure::config(e.to_string()))?;
    let z0 = cfg.init.draw(problem.dim(), cfg.seed, 0).map_err(|e| Failure::config(e.to_string()))?;
    let (traj, monitor) = diagnose(
        &problem,
        z0,
        cfg.horizon,
        cfg.seed,
        0,
        &RecordPlan::Every(cfg.record_every),
        Arc::new(SquaredNorm),
        cfg.diagnostics.monitor.clone(),
    )
    .map_err(|e| Failure::runtime(&e))?;
    let report = monitor.report();
    let mut outputs = Vec::new();
    let body = json!({ "config": cfg.to_json(), "report": report });
    write(&out, "report.json", &json::to_string(&body).expect("report serializes"), &mut outputs)?;
    write(&out, "trajectory.csv", &traj.to_csv(), &mut outputs)?;
    if cfg.diagnostics.csv {
        write(&out, "monitors.csv", &monitor.to_csv(), &mut outputs)?;
    }
    write_manifest(&out, "diagnose", &cfg, outputs)?;
    for s in &report.series {
        println!("{:<24} total {:>12.4e}  tail {:>10.3e}  {:?}", s.name, s.total, s.tail_fraction, s.verdict);
    }
    if let Some(sign) = &report.sign_condition {
        println!("sign condition: {} violations in {} points", sign.violations, sign.points_checked);
    }
    if let Some(p) = &report.window_probe {
        println!("window probe at t = {}: unbounded growth {}", p.t, p.unbounded_growth);
    }
    Ok(EXIT_OK)
}

fn cmd_specfun_check(args: &SpecfunArgs) -> CliResult {
    let points: Vec<PositiveReal> = if args.points.is_empty() {
        let lo = PositiveReal::new(args.lo).map_err(|e| Failure::config(format!("--lo: {e}")))?;
        let hi = PositiveReal::new(args.hi).map_err(|e| Failure::config(format!("--hi: {e}")))?;
        if lo.get() > hi.get() || args.n == 0 {
            return Err(Failure::config("need --lo ≤ --hi and --n ≥ 1"));
        }
        log_grid(lo, hi, args.n)
    } else {
        args.points
            .iter()
            .map(|&x| PositiveReal::new(x).map_err(|e| Failure::config(format!("--points: {e}"))))
            .collect::<std::result::Result<_, _>>()?
    };
    let mut csv = String::from("x,digamma,trigamma,lower,upper,ln_x,lower_ok,upper_ok,digamma_ok\n");
    let mut failures = 0usize;
    for x in points {
        let c = check_bounds(x);
        if !c.passed() {
            failures += 1;
        }
        let f = crate::engine::fmt_f64;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            f(c.x),
            f(c.digamma),
            f(c.trigamma),
            f(c.lower),
            f(c.upper),
            f(c.ln_x),
            c.lower_ok,
            c.upper_ok,
            c.digamma_ok
        ));
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        let path = dir.join("specfun.csv");
        fs::write(&path, &csv).map_err(|e| Failure::io(&path, e))?;
    } else {
        print!("{csv}");
    }
    if failures > 0 {
        eprintln!("{failures} grid points violate a bound");
        return Ok(EXIT_BOUNDS);
    }
    Ok(EXIT_OK)
}
