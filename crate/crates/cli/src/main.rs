//! `mcm`: run experiments, sweeps, the validation suite and step-size tables.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcm_core::algorithms::{gamma_bounds, Resolved};
use mcm_core::experiment::{self, ExperimentConfig, RunOptions, SweepAxis, SweepRow};
use mcm_core::validation::{self, CheckStatus, SuiteOptions};
use mcm_core::Error;
use serde::Serialize;

const EXIT_CONFIG: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "mcm", version, about = "Distributed SGD with bidirectional compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) pair of a config and write traces and summaries.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run even if the compressor preflight check fails.
        #[arg(long)]
        skip_validation: bool,
    },
    /// Rerun a config once per value of one knob and tabulate saturation levels.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of gamma, alpha_dwn, s, q.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values; gamma accepts expressions such as 0.5/L or 2*gamma_max.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Run even if the compressor preflight check fails.
        #[arg(long)]
        skip_validation: bool,
    },
    /// Run the Monte-Carlo validation suite and print a JSON report.
    Validate {
        /// Run a single check.
        #[arg(long)]
        only: Option<String>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Trials per compressor moment check.
        #[arg(long, default_value_t = 100_000)]
        moment_trials: usize,
        /// Replays per engine-level expectation check.
        #[arg(long, default_value_t = 10_000)]
        replay_trials: usize,
        /// Swap a biased compressor into the moment checks.
        #[arg(long, hide = true)]
        inject_biased_compressor: bool,
    },
    /// Print the maximal learning rates, for a config or for explicit constants.
    GammaMax {
        /// Derive L, ω and N from a config's problem and compressors.
        #[arg(long, conflicts_with_all = ["l", "omega_up", "omega_dwn", "workers"])]
        config: Option<PathBuf>,
        /// Smoothness constant; requires the three other constants.
        #[arg(long, requires_all = ["omega_up", "omega_dwn", "workers"])]
        l: Option<f64>,
        #[arg(long)]
        omega_up: Option<f64>,
        #[arg(long)]
        omega_dwn: Option<f64>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Maximum number of concurrent runs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Added to every run seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    /// Overrides the config's output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, RunOptions), Failure> {
        let cfg = ExperimentConfig::load(&self.config).map_err(Failure::Config)?;
        let opts =
            RunOptions { jobs: self.jobs, seed_offset: self.seed_offset, output_dir: self.output.clone(), write: true };
        Ok((cfg, opts))
    }
}

enum Failure {
    Config(Error),
    Validation(String),
    Diverged,
}

#[derive(Serialize)]
struct GammaRow {
    #[serde(skip_serializing_if = "Option::is_none")]
    algorithm: Option<String>,
    l: f64,
    omega_up: f64,
    omega_dwn: f64,
    workers: usize,
    up: f64,
    dwn: f64,
    upsilon: f64,
    degraded: f64,
    gamma_max: f64,
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize")
}

fn preflight(cfg: &ExperimentConfig, skip: bool) -> Result<(), Failure> {
    if skip {
        return Ok(());
    }
    let reports = experiment::preflight(cfg, 2024, validation::MIN_MOMENT_TRIALS * 10).map_err(Failure::Config)?;
    match reports.iter().find(|r| r.status == CheckStatus::Fail) {
        Some(r) => Err(Failure::Validation(format!("{}: {}", r.check, r.detail))),
        None => Ok(()),
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { common, skip_validation } => {
            let (cfg, opts) = common.load()?;
            preflight(&cfg, skip_validation)?;
            let result = experiment::run_experiment(&cfg, &opts).map_err(Failure::Config)?;
            let out = opts.output_dir.unwrap_or_else(|| cfg.output_dir.clone());
            for a in &result.algorithms {
                let level = a.summary.saturation_level.map_or_else(|| "NA".to_string(), |s| format!("{s:.4}"));
                let diverged = a.traces.iter().filter(|t| t.status == mcm_core::RunStatus::Diverged).count();
                emit(&format!("{:<16} saturation {level:>9}  diverged {diverged}/{}\n", a.label, a.traces.len()));
                if let Some(w) = a.traces.iter().find_map(|t| t.warning.as_ref()) {
                    eprintln!("warning: {}: {w}", a.label);
                }
            }
            emit(&format!("wrote {}\n", out.display()));
            if result.all_diverged() {
                return Err(Failure::Diverged);
            }
            Ok(())
        }
        Command::Sweep { common, axis, values, skip_validation } => {
            let (cfg, opts) = common.load()?;
            preflight(&cfg, skip_validation)?;
            let rows = experiment::sweep(&cfg, axis, &values, &opts).map_err(Failure::Config)?;
            let mut table = String::from(SweepRow::CSV_HEADER);
            table.push('\n');
            for r in &rows {
                table.push_str(&r.to_csv_line());
                table.push('\n');
            }
            let out = opts.output_dir.unwrap_or_else(|| cfg.output_dir.clone());
            std::fs::create_dir_all(&out).map_err(|e| Failure::Config(e.into()))?;
            let axis_name =
                serde_json::to_value(axis).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            std::fs::write(out.join(format!("sweep_{axis_name}.csv")), &table)
                .map_err(|e| Failure::Config(e.into()))?;
            emit(&table);
            if rows.iter().all(|r| r.saturation_level.is_none()) {
                return Err(Failure::Diverged);
            }
            Ok(())
        }
        Command::Validate { only, seed, moment_trials, replay_trials, inject_biased_compressor } => {
            let opts = SuiteOptions { seed, moment_trials, replay_trials, only, inject_biased_compressor };
            let reports = validation::run_suite(&opts).map_err(Failure::Config)?;
            emit(&format!("{}\n", json(&reports)));
            match reports.iter().find(|r| r.status == CheckStatus::Fail) {
                Some(r) => Err(Failure::Validation(format!("{} failed", r.check))),
                None => Ok(()),
            }
        }
        Command::GammaMax { config, l, omega_up, omega_dwn, workers } => {
            let rows = match (config, l, omega_up, omega_dwn, workers) {
                (Some(path), ..) => {
                    let cfg = ExperimentConfig::load(&path).map_err(Failure::Config)?;
                    let problem = cfg.problem.build().map_err(Failure::Config)?;
                    cfg.prepare(&problem)
                        .map_err(Failure::Config)?
                        .into_iter()
                        .map(|p| {
                            let r = Resolved::new(&p.config, problem.dim(), problem.num_workers())
                                .map_err(Failure::Config)?;
                            let b = gamma_bounds(problem.l, r.up.omega, r.dwn.omega, r.workers);
                            Ok(GammaRow {
                                algorithm: Some(p.label),
                                l: problem.l,
                                omega_up: r.up.omega,
                                omega_dwn: r.dwn.omega,
                                workers: r.workers,
                                up: b.up,
                                dwn: b.dwn,
                                upsilon: b.upsilon,
                                degraded: b.degraded,
                                gamma_max: r.gamma_max(problem.l),
                            })
                        })
                        .collect::<Result<Vec<_>, Failure>>()?
                }
                (None, Some(l), Some(omega_up), Some(omega_dwn), Some(workers)) => {
                    if l.is_nan() || l <= 0.0 || omega_up < 0.0 || omega_dwn < 0.0 || workers == 0 {
                        return Err(Failure::Config(Error::InvalidConfig {
                            field: "gamma-max".into(),
                            msg: "needs L > 0, ω ≥ 0 and at least one worker".into(),
                        }));
                    }
                    let b = gamma_bounds(l, omega_up, omega_dwn, workers);
                    vec![GammaRow {
                        algorithm: None,
                        l,
                        omega_up,
                        omega_dwn,
                        workers,
                        up: b.up,
                        dwn: b.dwn,
                        upsilon: b.upsilon,
                        degraded: b.degraded,
                        gamma_max: b.non_degraded_max(),
                    }]
                }
                _ => {
                    return Err(Failure::Config(Error::InvalidConfig {
                        field: "gamma-max".into(),
                        msg: "pass --config, or all of --l, --omega-up, --omega-dwn and --workers".into(),
                    }))
                }
            };
            emit(&format!("{}\n", json(&rows)));
            Ok(())
        }
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) ends output quietly.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: writing output: {e}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Validation(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Diverged) => {
            eprintln!("every run diverged");
            ExitCode::from(EXIT_DIVERGED)
        }
    }
}
