//! Command-line entry points. Each command reads one TOML file, writes CSV
//! tables plus a JSON metadata sidecar, and maps failures to exit codes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::{self, EstimateConfig, OracleConfig, SensitivityConfig, SimulateConfig};
use crate::error::{Error, Result};
use crate::glm::IrlsOptions;
use crate::inference::{analyze, EstimateResult, MAX_FAILED_SHARE, MIN_REPLICATES};
use crate::numeric::HERMITE_NODES;
use crate::oracle::{certify, reference_fixture, DiscreteDgp};
use crate::sensitivity::{sensitivity_grid, SensitivityPoint};
use crate::simulation::{compute_truth_with, run_scenario_study};

/// Exit code for a failed oracle identity.
pub const EXIT_ORACLE_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "psmed", version, about = "Principal-stratum natural mediation effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate stratum and population effects from a CSV file.
    Estimate(RunArgs),
    /// Run a simulation study under one misspecification scenario.
    Simulate(RunArgs),
    /// Sweep a sensitivity grid for one effect.
    Sensitivity(RunArgs),
    /// Certify exact population identities on a discrete fixture.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Fixture file; overrides the configured one.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn main() -> i32 {
    run(Cli::parse())
}

pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Sensitivity(a) => cmd_sensitivity(&a),
        Command::Oracle(a) => cmd_oracle(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn output(cfg: &config::OutputConfig, out: &Option<PathBuf>) -> config::OutputConfig {
    match out {
        Some(dir) => config::OutputConfig {
            dir: dir.clone(),
            prefix: cfg.prefix.clone(),
        },
        None => cfg.clone(),
    }
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v}")
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    f.write_all(bytes)?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    write_file(path, &bytes)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub const RESULT_COLUMNS: [&str; 11] = [
    "estimand", "stratum", "scale", "method", "point", "se", "ci_low", "ci_high", "inference", "b_or_v", "seed",
];

fn result_fields(r: &EstimateResult) -> Vec<String> {
    vec![
        r.estimand.clone(),
        r.stratum.clone(),
        r.scale.clone(),
        r.method.to_string(),
        num(r.point),
        num(r.se),
        num(r.ci_low),
        num(r.ci_high),
        r.inference.as_str().to_string(),
        r.b_or_v.to_string(),
        r.seed.to_string(),
    ]
}

/// Every numeric control that shapes a run.
fn knobs(pos: &crate::nuisance::Positivity, bootstrap: usize, folds: usize, level: f64) -> serde_json::Value {
    let irls = IrlsOptions::default();
    json!({
        "clip_floor": pos.clip_floor,
        "strict_positivity": pos.strict,
        "ratio_limit": pos.ratio_limit,
        "irls_tolerance": irls.tolerance,
        "irls_max_iter": irls.max_iter,
        "irls_ridge": irls.ridge,
        "quadrature_nodes": HERMITE_NODES,
        "bootstrap": bootstrap,
        "folds": folds,
        "level": level,
        "min_replicates": MIN_REPLICATES,
        "max_failed_share": MAX_FAILED_SHARE,
    })
}

fn error_record(e: &Error) -> serde_json::Value {
    json!({
        "error": e.to_string(),
        "class": format!("{:?}", e.class()),
        "exit_code": e.exit_code(),
    })
}

pub fn cmd_estimate(args: &RunArgs) -> Result<i32> {
    let mut cfg: EstimateConfig = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.analysis.seed = s;
    }
    let base = base_dir(&args.config);
    let out = output(&cfg.output, &args.out);
    let data = cfg.data.load(&base)?;
    let opts = cfg.options(&data)?;
    let analysis = match analyze(&data, &opts) {
        Ok(a) => a,
        Err(e) => {
            write_json(&out.file(&base, "diagnostics.json"), &error_record(&e))?;
            return Err(e);
        }
    };
    let rows: Vec<Vec<String>> = analysis.results.iter().map(result_fields).collect();
    write_csv(&out.file(&base, "results.csv"), &RESULT_COLUMNS, &rows)?;
    let meta = json!({
        "command": "estimate",
        "schema_version": 1,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "n": data.n(),
        "p": data.p(),
        "cell_counts": data.cell_counts().0,
        "knobs": knobs(&opts.positivity, opts.bootstrap, opts.folds, opts.level),
        "diagnostics": analysis.diagnostics,
    });
    write_json(&out.file(&base, "metadata.json"), &meta)?;
    println!("{} result rows written to {}", rows.len(), out.file(&base, "results.csv").display());
    Ok(0)
}

pub const REPLICATE_COLUMNS: [&str; 10] = ["scenario", "rep", "method", "target", "estimate", "se", "ci_low", "ci_high", "covered", "error"];

pub const SUMMARY_COLUMNS: [&str; 13] = [
    "scenario", "method", "target", "truth", "truth_se", "reps", "failed", "mean", "bias", "sd", "bias_se", "coverage", "low_replicate",
];

pub fn cmd_simulate(args: &RunArgs) -> Result<i32> {
    let mut cfg: SimulateConfig = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let base = base_dir(&args.config);
    let out = output(&cfg.output, &args.out);
    let study = cfg.study()?;
    let truth_seed = cfg.truth_seed.unwrap_or(cfg.seed);
    let truth = compute_truth_with(&study.params, truth_seed, cfg.truth_draws).map_err(|e| Error::Config(e.to_string()))?;
    let result = match run_scenario_study(&study, &truth) {
        Ok(r) => r,
        Err(e) => {
            write_json(&out.file(&base, "diagnostics.json"), &error_record(&e))?;
            return Err(e);
        }
    };
    let reps: Vec<Vec<String>> = result
        .replicates
        .iter()
        .map(|r| {
            vec![
                r.scenario.to_string(),
                r.rep.to_string(),
                r.method.to_string(),
                r.target.clone(),
                num(r.estimate),
                num(r.se),
                num(r.ci_low),
                num(r.ci_high),
                r.covered.map(|c| (c as u8).to_string()).unwrap_or_else(|| "NA".into()),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(&out.file(&base, "replicates.csv"), &REPLICATE_COLUMNS, &reps)?;
    let summary: Vec<Vec<String>> = result
        .summary
        .iter()
        .map(|r| {
            vec![
                r.scenario.to_string(),
                r.method.to_string(),
                r.target.clone(),
                num(r.truth),
                num(r.truth_se),
                r.reps.to_string(),
                r.failed.to_string(),
                num(r.mean),
                num(r.bias),
                num(r.sd),
                num(r.bias_se),
                r.coverage.map(num).unwrap_or_else(|| "NA".into()),
                r.low_replicate.to_string(),
            ]
        })
        .collect();
    write_csv(&out.file(&base, "summary.csv"), &SUMMARY_COLUMNS, &summary)?;
    let truth_rows: Vec<Vec<String>> = truth
        .rows()
        .into_iter()
        .map(|(q, s, v, se)| vec![q, s, num(v), num(se)])
        .collect();
    write_csv(&out.file(&base, "truth.csv"), &["quantity", "stratum", "value", "se"], &truth_rows)?;
    let meta = json!({
        "command": "simulate",
        "schema_version": 1,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "truth": { "draws": truth.draws, "seed": truth.seed },
        "nonfinite_transformed_covariates": result.nonfinite_features,
        "knobs": knobs(&study.positivity, study.bootstrap, study.folds, study.level),
    });
    write_json(&out.file(&base, "metadata.json"), &meta)?;
    for r in &result.summary {
        let cov = r.coverage.map(|c| format!("{c:.3}")).unwrap_or_else(|| "NA".into());
        println!(
            "{} {} {}: bias {:.4} (se {:.4}), sd {:.4}, coverage {}{}",
            r.scenario,
            r.method,
            r.target,
            r.bias,
            r.bias_se,
            r.sd,
            cov,
            if r.low_replicate { " [low replicate count]" } else { "" }
        );
    }
    Ok(0)
}

pub const GRID_COLUMNS: [&str; 20] = [
    "framework", "lambda_m1", "lambda_m0", "lambda_y1", "lambda_y0", "zeta", "estimand", "stratum", "scale", "method", "point", "se", "ci_low", "ci_high",
    "inference", "b_or_v", "seed", "tipping", "status", "error",
];

pub fn cmd_sensitivity(args: &RunArgs) -> Result<i32> {
    let mut cfg: SensitivityConfig = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let base = base_dir(&args.config);
    let out = output(&cfg.output, &args.out);
    let grid = cfg.grid.points()?;
    let data = cfg.data.load(&base)?;
    let opts = cfg.options(&data)?;
    let rows = match sensitivity_grid(&data, &grid, &opts) {
        Ok(r) => r,
        Err(e) => {
            write_json(&out.file(&base, "diagnostics.json"), &error_record(&e))?;
            return Err(e);
        }
    };
    let na = || "NA".to_string();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            let mut f = match row.point {
                SensitivityPoint::Xi(s) => vec![
                    "xi".to_string(),
                    num(s.lambda_m1),
                    num(s.lambda_m0),
                    num(s.lambda_y1),
                    num(s.lambda_y0),
                    na(),
                ],
                SensitivityPoint::T(s) => vec!["t".to_string(), na(), na(), na(), na(), num(s.zeta)],
            };
            match &row.result {
                Some(r) => f.extend(result_fields(r)),
                None => f.extend([
                    opts.effect.estimand.name(),
                    opts.effect.stratum_label(),
                    opts.scale.as_str().to_string(),
                    "mr".to_string(),
                    na(),
                    na(),
                    na(),
                    na(),
                    opts.interval.as_str().to_string(),
                    opts.bootstrap.to_string(),
                    opts.seed.to_string(),
                ]),
            }
            f.push(row.tipping.to_string());
            f.push(if row.result.is_some() { "ok" } else { "failed" }.to_string());
            f.push(row.error.clone().unwrap_or_default());
            f
        })
        .collect();
    write_csv(&out.file(&base, "grid.csv"), &GRID_COLUMNS, &table)?;
    let succeeded = rows.iter().filter(|r| r.result.is_some()).count();
    let tipping: Vec<String> = rows.iter().filter(|r| r.tipping).map(|r| r.label.clone()).collect();
    let meta = json!({
        "command": "sensitivity",
        "schema_version": 1,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "n": data.n(),
        "grid_points": rows.len(),
        "succeeded": succeeded,
        "failed": rows.len() - succeeded,
        "tipping_points": tipping,
        "knobs": knobs(&opts.positivity, opts.bootstrap, 0, opts.level),
    });
    write_json(&out.file(&base, "metadata.json"), &meta)?;
    println!("{succeeded} of {} grid points estimated", rows.len());
    match tipping.first() {
        Some(t) => println!("conclusion changes at {t}"),
        None => println!("no tipping point in the grid"),
    }
    if succeeded == 0 {
        let last = rows.iter().rev().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::TooManyFailedReplicates {
            failed: rows.len(),
            total: rows.len(),
            last,
        });
    }
    Ok(0)
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<i32> {
    let (cfg, base) = match &args.config {
        Some(p) => (config::load::<OracleConfig>(p)?, base_dir(p)),
        None => (OracleConfig::default(), PathBuf::new()),
    };
    let fixture = args.fixture.clone().or_else(|| cfg.fixture.as_ref().map(|f| if f.is_absolute() { f.clone() } else { base.join(f) }));
    let dgp = match &fixture {
        Some(p) => DiscreteDgp::load(p)?,
        None => reference_fixture(),
    };
    let report = certify(&dgp)?;
    print!("{}", report.summary());
    if args.config.is_some() || args.out.is_some() {
        let out = output(&cfg.output, &args.out);
        let rows: Vec<Vec<String>> = report
            .checks
            .iter()
            .map(|c| vec![c.name.clone(), num(c.max_abs), num(c.tolerance), c.passed.to_string(), c.error.clone().unwrap_or_default()])
            .collect();
        write_csv(&out.file(&base, "oracle.csv"), &["check", "max_abs", "tolerance", "passed", "error"], &rows)?;
    }
    Ok(if report.passed() { 0 } else { EXIT_ORACLE_FAILURE })
}
