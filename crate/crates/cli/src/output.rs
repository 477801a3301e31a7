//! Run directories: CSV series, manifest and parameter checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::runner::{MeanSeries, Record, RunReport, RunStatus};

pub const ERRORS_HEADER: &str = "step,t,abs_err,rel_err,residual,eff_rank,cond_est,wall_ms";

/// Output root: `TNN_OUTPUT_ROOT` if set, else `runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os("TNN_OUTPUT_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Directory of a configuration under `root` (absolute `output.dir` wins).
pub fn run_dir(root: &Path, config: &ExperimentConfig) -> PathBuf {
    let d = Path::new(&config.output.dir);
    if d.is_absolute() {
        d.to_path_buf()
    } else {
        root.join(d)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn errors_csv(records: &[Record]) -> String {
    let mut s = String::from(ERRORS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{:e},{},{:e},{},{:e},{}",
            r.step,
            r.t,
            r.abs_err,
            opt(r.rel_err),
            r.residual,
            r.eff_rank,
            r.cond_est,
            r.wall_ms
        );
    }
    s
}

pub fn norms_csv(records: &[Record]) -> String {
    let mut s = String::from("step,t,norm,energy\n");
    for r in records {
        let _ = writeln!(s, "{},{},{:e},{}", r.step, r.t, r.norm, opt(r.energy));
    }
    s
}

pub fn mean_csv(m: &MeanSeries) -> String {
    let mut s = format!(
        "# completed {} of {}{}\nstep,t,mean_abs_err,mean_rel_err\n",
        m.completed,
        m.total,
        if m.incomplete() { " (incomplete)" } else { "" }
    );
    for (step, t, abs, rel) in &m.rows {
        let _ = writeln!(s, "{step},{t},{abs:e},{}", opt(*rel));
    }
    s
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn status_json(status: &RunStatus) -> serde_json::Value {
    match status {
        RunStatus::Completed => json!({ "state": "completed" }),
        RunStatus::Failed { step, t, message } => {
            json!({ "state": "failed", "step": step, "t": t, "message": message })
        }
    }
}

pub fn manifest(config: &ExperimentConfig, report: &RunReport) -> serde_json::Value {
    let det = config.output.deterministic;
    let fit = report.fit.as_ref().map(|f| {
        json!({
            "loss": f.loss,
            "relative_error": f.relative,
            "iterations": f.iterations,
            "converged": f.converged,
            "wall_ms": if det { 0 } else { f.wall_ms },
        })
    });
    json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "seeds": config.seeds,
        "optimizer": {
            "kind": "adam",
            "beta1": 0.9,
            "beta2": 0.999,
            "epsilon": 1e-12,
            "schedule": "cosine",
            "output_layer_polish": "least_squares",
        },
        "fit": fit,
        "status": status_json(&report.status),
        "final_step": report.final_step,
        "final_t": report.final_t,
        "rng_word_pos": report.rng_word_pos.to_string(),
        "started_unix": if det { 0 } else { report.started_unix },
        "finished_unix": if det { 0 } else { report.finished_unix },
        "evolve_wall_ms": if det { 0 } else { report.evolve_wall_ms },
    })
}

/// Writes every artifact of one run into `dir`.
pub fn write_run(
    dir: &Path,
    config: &ExperimentConfig,
    report: &RunReport,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write(&dir.join("errors.csv"), errors_csv(&report.records))?;
    write(&dir.join("norms.csv"), norms_csv(&report.records))?;
    if let Some(fit) = &report.fit {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in &fit.trace {
            let _ = writeln!(s, "{i},{l:e}");
        }
        write(&dir.join("fit_trace.csv"), s)?;
    }
    let m = serde_json::to_string_pretty(&manifest(config, report)).expect("manifest serializes");
    write(&dir.join("manifest.json"), m)?;
    let init = Checkpoint::new(
        report.params_init.clone(),
        report.records.first().map_or(0.0, |r| r.t),
        report.records.first().map_or(0, |r| r.step),
        0,
    );
    let fin = Checkpoint::new(
        report.params_final.clone(),
        report.final_t,
        report.final_step,
        report.rng_word_pos,
    );
    for (name, c) in [("params_init", &init), ("params_final", &fin)] {
        c.save(&dir.join(format!("{name}.bin")))?;
        c.save(&dir.join(format!("{name}.json")))?;
    }
    for c in &report.checkpoints {
        c.save(&dir.join(format!("ckpt_{:08}.bin", c.meta.step)))?;
    }
    Ok(())
}
