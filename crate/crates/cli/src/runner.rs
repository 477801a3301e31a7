//! End-to-end runs: fit the initial condition, evolve, record errors.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use tnn_core::fit::network_field;
use tnn_core::galerkin::{advance, StageReport};
use tnn_core::operators::PdeKind;
use tnn_core::{
    eval_factors, fit_initial, init_network, l2_error, EvolutionState, GalerkinRhs, ParamMask,
    Partitioner, QuadratureRule1D, SeparableField, TnnParams, VelocityField,
};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::CliError;

/// One row of the error time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub step: u64,
    pub t: f64,
    pub abs_err: f64,
    pub rel_err: Option<f64>,
    /// `sqrt(2J)` of the projection at this state
    pub residual: f64,
    pub eff_rank: usize,
    pub cond_est: f64,
    pub wall_ms: u64,
    /// `||u||`
    pub norm: f64,
    /// kinetic energy `1/2 int |grad psi|^2` for the vorticity problem
    pub energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Failed { step: u64, t: f64, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub loss: f64,
    pub relative: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<(usize, f64)>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub records: Vec<Record>,
    pub status: RunStatus,
    pub fit: Option<FitSummary>,
    pub params_init: TnnParams,
    pub params_final: TnnParams,
    pub final_step: u64,
    pub final_t: f64,
    pub rng_word_pos: u128,
    pub checkpoints: Vec<Checkpoint>,
    pub evolve_wall_ms: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunReport {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

struct Setup {
    problem: tnn_core::PdeProblem,
    rules: Vec<QuadratureRule1D>,
}

fn setup(config: &ExperimentConfig) -> Result<Setup, CliError> {
    config.validate()?;
    Ok(Setup {
        problem: config.problem.build(),
        rules: config.rules().map_err(CliError::from_config)?,
    })
}

/// Fresh initialization fitted to the initial condition.
pub fn fit_stage(config: &ExperimentConfig) -> Result<(TnnParams, FitSummary), CliError> {
    let s = setup(config)?;
    let arch = config.arch().map_err(CliError::from_config)?;
    let init = init_network(&arch, config.seeds.init)?;
    let u0 = s.problem.initial_condition(&s.rules)?;
    let mut fc = config.fit;
    fc.seed = config.seeds.fit;
    let start = Instant::now();
    let out = fit_initial(&init, &u0, &s.rules, &fc)?;
    let (_, relative) = l2_error(&out.params, &u0, &s.rules)?;
    let summary = FitSummary {
        loss: out.loss,
        relative,
        iterations: out.iterations,
        converged: out.converged,
        trace: out.trace,
        wall_ms: start.elapsed().as_millis() as u64,
    };
    Ok((out.params, summary))
}

/// Fit, then evolve to `t_end`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport, CliError> {
    let started = unix_now();
    let (params, fit) = fit_stage(config)?;
    let mut report = evolve(config, params, 0, 0.0, 0, Some(fit))?;
    report.started_unix = started;
    Ok(report)
}

/// Evolve from a checkpoint (its time, step and mask-stream position).
pub fn evolve_from(config: &ExperimentConfig, ckpt: &Checkpoint) -> Result<RunReport, CliError> {
    let arch = config.arch().map_err(CliError::from_config)?;
    if *ckpt.params.arch() != arch {
        return Err(CliError::Config(
            "checkpoint architecture does not match the config".into(),
        ));
    }
    evolve(
        config,
        ckpt.params.clone(),
        ckpt.meta.step,
        ckpt.meta.t,
        ckpt.rng_word_pos(),
        None,
    )
}

struct Metrics<'a> {
    problem: &'a tnn_core::PdeProblem,
    rules: &'a [QuadratureRule1D],
}

impl Metrics<'_> {
    fn measure(
        &self,
        params: &TnnParams,
        t: f64,
    ) -> Result<(f64, Option<f64>, f64, Option<f64>), CliError> {
        let reference = self.problem.analytic_solution(self.rules, t)?;
        let (abs, rel) = l2_error(params, &reference, self.rules)?;
        let norm = network_field(params, self.rules)?.norm(self.rules)?;
        let energy = match self.problem.kind {
            PdeKind::NavierStokes { .. } => {
                let f = eval_factors(params, self.rules, 1)?;
                let px = SeparableField::from_factors(&f, &[1, 0], 1.0)?;
                let py = SeparableField::from_factors(&f, &[0, 1], 1.0)?;
                Some(0.5 * (px.inner(&px, self.rules)? + py.inner(&py, self.rules)?))
            }
            _ => None,
        };
        Ok((abs, rel, norm, energy))
    }
}

fn fill(rec: &mut Record, st: &StageReport) {
    rec.residual = st.residual;
    rec.eff_rank = st.solve.effective_rank;
    rec.cond_est = st.solve.cond_estimate;
}

fn evolve(
    config: &ExperimentConfig,
    params: TnnParams,
    step0: u64,
    t0: f64,
    rng_pos: u128,
    fit: Option<FitSummary>,
) -> Result<RunReport, CliError> {
    let s = setup(config)?;
    let started_unix = unix_now();
    let deterministic = config.output.deterministic;
    let dt = config.evolution.dt;
    let steps = config.steps();
    let cadence = config.output.cadence;
    let mut rhs = GalerkinRhs::new(s.problem.clone(), s.rules.clone())?;
    rhs.rcond = config.evolution.rcond;
    let strategy = config.partition_strategy()?;
    let mut masks = if step0 == 0 {
        Partitioner::new(strategy)
    } else {
        Partitioner::resume(strategy, rng_pos)
    };
    let metrics = Metrics {
        problem: &s.problem,
        rules: &s.rules,
    };
    let clock = Instant::now();
    let wall = |c: &Instant| {
        if deterministic {
            0
        } else {
            c.elapsed().as_millis() as u64
        }
    };

    // the state's t0 is the start of the time grid, so t = t0 + step * dt
    let grid_t0 = t0 - step0 as f64 * dt;
    let mut state = EvolutionState::new(params.clone(), ParamMask::full(params.arch()), grid_t0);
    state.step = step0;
    state.t = t0;

    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let mut ticks = 0u64;
    let make_record = |state: &EvolutionState, wall_ms: u64| -> Result<Record, CliError> {
        let (abs_err, rel_err, norm, energy) = metrics.measure(&state.params, state.t)?;
        Ok(Record {
            step: state.step,
            t: state.t,
            abs_err,
            rel_err,
            residual: f64::NAN,
            eff_rank: 0,
            cond_est: f64::NAN,
            wall_ms,
            norm,
            energy,
        })
    };
    // a record waits for the first stage of the following step, which is the
    // projection evaluated at exactly the recorded state
    let mut pending = Some(make_record(&state, 0)?);
    let mut status = RunStatus::Completed;
    let end_step = step0.max(steps);
    while state.step < end_step {
        match advance(
            &state,
            dt,
            config.evolution.integrator,
            &mut rhs,
            &mut masks,
        ) {
            Ok((next, rep)) => {
                if let Some(mut rec) = pending.take() {
                    fill(&mut rec, &rep.stages[0]);
                    records.push(rec);
                }
                state = next;
            }
            Err(e) => {
                status = RunStatus::Failed {
                    step: state.step,
                    t: state.t,
                    message: e.to_string(),
                };
                break;
            }
        }
        if state.step % cadence == 0 || state.step == end_step {
            pending = Some(make_record(&state, wall(&clock))?);
            ticks += 1;
            let every = config.output.checkpoint_every;
            if every > 0 && ticks % every == 0 {
                checkpoints.push(Checkpoint::new(
                    state.params.clone(),
                    state.t,
                    state.step,
                    masks.word_pos(),
                ));
            }
        }
    }
    if let Some(mut rec) = pending.take() {
        if status == RunStatus::Completed {
            // last step's mask, so the stream position stays resumable
            match rhs.velocity(&state.params, &state.mask, state.t) {
                Ok((_, st)) => fill(&mut rec, &st),
                Err(e) => {
                    status = RunStatus::Failed {
                        step: state.step,
                        t: state.t,
                        message: e.to_string(),
                    }
                }
            }
        }
        records.push(rec);
    }
    if status == RunStatus::Completed {
        let bad = records.iter().any(|r| {
            !(r.abs_err.is_finite()
                && r.residual.is_finite()
                && r.cond_est.is_finite()
                && r.norm.is_finite())
        });
        if bad {
            status = RunStatus::Failed {
                step: state.step,
                t: state.t,
                message: "non-finite value in the error series".into(),
            };
        }
    }
    Ok(RunReport {
        name: config.name.clone(),
        records,
        status,
        fit,
        params_init: params,
        params_final: state.params,
        final_step: state.step,
        final_t: state.t,
        rng_word_pos: masks.word_pos(),
        checkpoints,
        evolve_wall_ms: clock.elapsed().as_millis() as u64,
        started_unix,
        finished_unix: unix_now(),
    })
}

/// Pointwise mean over the completed runs of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSeries {
    pub name: String,
    /// `(step, t, mean abs_err, mean rel_err)`
    pub rows: Vec<(u64, f64, f64, Option<f64>)>,
    pub completed: usize,
    pub total: usize,
}

impl MeanSeries {
    pub fn incomplete(&self) -> bool {
        self.completed < self.total
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    /// `(config index, repetition, result)`
    pub runs: Vec<(usize, u64, Result<RunReport, String>)>,
    pub means: Vec<MeanSeries>,
}

pub fn mean_series(name: &str, reports: &[&RunReport], total: usize) -> MeanSeries {
    let done: Vec<&&RunReport> = reports.iter().filter(|r| r.completed()).collect();
    let len = done.iter().map(|r| r.records.len()).min().unwrap_or(0);
    let n = done.len() as f64;
    let rows = (0..len)
        .map(|i| {
            let first = &done[0].records[i];
            let abs = done.iter().map(|r| r.records[i].abs_err).sum::<f64>() / n;
            let rel = done
                .iter()
                .map(|r| r.records[i].rel_err)
                .sum::<Option<f64>>()
                .map(|s| s / n);
            (first.step, first.t, abs, rel)
        })
        .collect();
    MeanSeries {
        name: name.to_string(),
        rows,
        completed: done.len(),
        total,
    }
}

/// Runs every configuration `repetitions` times. Repetition `k` shifts every
/// seed by `k` unless `same_seeds` is set. Runs are spread over `threads`
/// worker threads; each run is independent, so results do not depend on it.
pub fn run_sweep(
    configs: &[ExperimentConfig],
    repetitions: u64,
    same_seeds: bool,
    threads: usize,
) -> Result<SweepReport, CliError> {
    if repetitions == 0 {
        return Err(CliError::Config("repetitions must be at least 1".into()));
    }
    for c in configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, u64, ExperimentConfig)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            (0..repetitions).map(move |k| {
                let cfg = if same_seeds {
                    c.clone()
                } else {
                    c.with_repetition(k)
                };
                (i, k, cfg)
            })
        })
        .collect();
    let threads = threads.max(1).min(jobs.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new(Vec::with_capacity(jobs.len()));
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some((i, k, cfg)) = jobs.get(j) else {
                    break;
                };
                let r = run_experiment(cfg).map_err(|e| e.to_string());
                results
                    .lock()
                    .expect("no poisoned lock")
                    .push((j, *i, *k, r));
            });
        }
    });
    let mut results = results.into_inner().expect("no poisoned lock");
    results.sort_by_key(|r| r.0);
    let runs: Vec<(usize, u64, Result<RunReport, String>)> =
        results.into_iter().map(|(_, i, k, r)| (i, k, r)).collect();
    let means = configs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let reps: Vec<&RunReport> = runs
                .iter()
                .filter(|(ci, _, _)| *ci == i)
                .filter_map(|(_, _, r)| r.as_ref().ok())
                .collect();
            mean_series(&c.name, &reps, repetitions as usize)
        })
        .collect();
    Ok(SweepReport { runs, means })
}
