use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tnn_cli::checkpoint::Checkpoint;
use tnn_cli::output::{self, output_root, run_dir};
use tnn_cli::runner::{self, RunReport};
use tnn_cli::{presets, resolve_configs, verify, CliError, ExperimentConfig};

/// Tensor neural network time evolution experiments.
///
/// CONFIG is a TOML file or `preset:<name>` (see `tnn presets`).
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Root directory for run outputs
    #[arg(long, global = true, env = "TNN_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the initial condition only and write params_init
    FitInit { config: String },
    /// Continue a run from a checkpoint
    Evolve {
        config: String,
        #[arg(long)]
        from: PathBuf,
    },
    /// Fit and evolve
    Run { config: String },
    /// Repeat every configuration with shifted seeds and average the errors
    Sweep {
        config: String,
        #[arg(long, default_value_t = 3)]
        reps: u64,
        /// reuse the same seeds in every repetition
        #[arg(long)]
        same_seeds: bool,
        #[arg(long, env = "TNN_THREADS", default_value_t = 1)]
        threads: usize,
    },
    /// Run the self-check suite for a configuration
    Verify { config: String },
    /// List presets
    Presets,
    /// Print a configuration as TOML
    Show { config: String },
}

fn root(cli: &Cli) -> PathBuf {
    cli.output_root.clone().unwrap_or_else(output_root)
}

fn summarize(report: &RunReport) {
    match (&report.status, report.last()) {
        (runner::RunStatus::Completed, Some(r)) => eprintln!(
            "{}: t = {} abs_err = {:.3e} rel_err = {}",
            report.name,
            r.t,
            r.abs_err,
            r.rel_err.map_or("-".into(), |v| format!("{v:.3e}"))
        ),
        (runner::RunStatus::Failed { t, message, .. }, _) => {
            eprintln!("{}: failed at t = {t}: {message}", report.name)
        }
        _ => eprintln!("{}: no records", report.name),
    }
}

fn finish(reports: &[RunReport]) -> Result<(), CliError> {
    match reports.iter().find(|r| !r.completed()) {
        Some(r) => Err(CliError::Numerical(format!(
            "run {} did not complete",
            r.name
        ))),
        None => Ok(()),
    }
}

fn one(configs: Vec<ExperimentConfig>, what: &str) -> Result<ExperimentConfig, CliError> {
    let mut it = configs.into_iter();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(CliError::Config(format!(
            "{what} takes a single configuration"
        ))),
    }
}

fn main_inner(cli: &Cli) -> Result<(), CliError> {
    let root = root(cli);
    match &cli.cmd {
        Cmd::Presets => {
            for name in presets::names() {
                let n = presets::suite(name).map_or(0, |s| s.len());
                println!("{name}\t{n} configuration(s)");
            }
            Ok(())
        }
        Cmd::Show { config } => {
            for c in resolve_configs(config)? {
                println!("{}", c.to_toml_string());
            }
            Ok(())
        }
        Cmd::Verify { config } => {
            let mut failed = 0;
            for c in resolve_configs(config)? {
                for check in verify::verify(&c)? {
                    let tag = if check.passed { "PASS" } else { "FAIL" };
                    println!("{tag} [{}] {}: {}", c.name, check.name, check.detail);
                    failed += usize::from(!check.passed);
                }
            }
            if failed > 0 {
                return Err(CliError::Numerical(format!("{failed} check(s) failed")));
            }
            Ok(())
        }
        Cmd::FitInit { config } => {
            for c in resolve_configs(config)? {
                let (params, fit) = runner::fit_stage(&c)?;
                let dir = run_dir(&root, &c);
                std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
                let ckpt = Checkpoint::new(params, 0.0, 0, 0);
                ckpt.save(&dir.join("params_init.bin"))?;
                ckpt.save(&dir.join("params_init.json"))?;
                eprintln!(
                    "{}: fit error {:.3e} (relative {}) after {} iterations",
                    c.name,
                    fit.loss,
                    fit.relative.map_or("-".into(), |v| format!("{v:.3e}")),
                    fit.iterations
                );
            }
            Ok(())
        }
        Cmd::Evolve { config, from } => {
            let c = one(resolve_configs(config)?, "evolve")?;
            let ckpt = Checkpoint::load(from)?;
            let report = runner::evolve_from(&c, &ckpt)?;
            output::write_run(&run_dir(&root, &c), &c, &report)?;
            summarize(&report);
            finish(&[report])
        }
        Cmd::Run { config } => {
            let mut reports = Vec::new();
            for c in resolve_configs(config)? {
                let report = runner::run_experiment(&c)?;
                output::write_run(&run_dir(&root, &c), &c, &report)?;
                summarize(&report);
                reports.push(report);
            }
            finish(&reports)
        }
        Cmd::Sweep {
            config,
            reps,
            same_seeds,
            threads,
        } => {
            let configs = resolve_configs(config)?;
            let sweep = runner::run_sweep(&configs, *reps, *same_seeds, *threads)?;
            let mut any_failed = false;
            for (i, k, r) in &sweep.runs {
                let c = &configs[*i];
                let cfg = if *same_seeds {
                    c.clone()
                } else {
                    c.with_repetition(*k)
                };
                let dir = run_dir(&root, c).join(format!("rep{k}"));
                match r {
                    Ok(report) => {
                        output::write_run(&dir, &cfg, report)?;
                        summarize(report);
                        any_failed |= !report.completed();
                    }
                    Err(m) => {
                        eprintln!("{} rep {k}: {m}", c.name);
                        any_failed = true;
                    }
                }
            }
            for (c, m) in configs.iter().zip(&sweep.means) {
                let dir = run_dir(&root, c);
                std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
                let path = dir.join("mean.csv");
                std::fs::write(&path, output::mean_csv(m)).map_err(|e| CliError::io(&path, e))?;
            }
            if any_failed {
                return Err(CliError::Numerical("some sweep runs failed".into()));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
