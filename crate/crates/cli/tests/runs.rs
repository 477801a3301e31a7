use tnn_cli::checkpoint::Checkpoint;
use tnn_cli::config::*;
use tnn_cli::output::{errors_csv, manifest, write_run, ERRORS_HEADER};
use tnn_cli::presets;
use tnn_cli::runner::{evolve_from, mean_series, run_experiment, run_sweep, RunStatus};
use tnn_core::galerkin::Integrator;
use tnn_core::{FitConfig, PartitionKind};

fn small(name: &str) -> ExperimentConfig {
    let mut c = presets::suite("transport-2d").unwrap().remove(0);
    c.name = name.into();
    c.output.dir = name.into();
    c.architecture.hidden = vec![6, 6];
    c.quadrature = QuadratureConfig {
        points: 8,
        panels: 2,
    };
    c.evolution = EvolutionConfig {
        dt: 1e-2,
        t_end: 0.1,
        integrator: Integrator::Rk4,
        rcond: 1e-10,
    };
    c.strategy = StrategyConfig {
        kind: PartitionKind::RandomPerStep,
        ratio: Some(0.5),
        count: None,
    };
    c.fit = FitConfig {
        max_iterations: 5,
        prefit_iterations: 100,
        ..presets::suite("transport-2d").unwrap()[0].fit
    };
    c.output.cadence = 2;
    c
}

#[test]
fn time_column_is_increasing_and_series_finite() {
    let r = run_experiment(&small("mono")).unwrap();
    assert_eq!(r.status, RunStatus::Completed);
    let steps: Vec<u64> = r.records.iter().map(|x| x.step).collect();
    assert_eq!(steps, vec![0, 2, 4, 6, 8, 10]);
    for w in r.records.windows(2) {
        assert!(w[1].t > w[0].t);
    }
    for x in &r.records {
        assert!(x.abs_err.is_finite() && x.residual.is_finite() && x.cond_est.is_finite());
        assert!(x.eff_rank > 0);
        assert_eq!(x.wall_ms, 0);
    }
}

#[test]
fn resuming_from_a_checkpoint_reproduces_the_run() {
    let mut cfg = small("resume");
    cfg.output.checkpoint_every = 2;
    let full = run_experiment(&cfg).unwrap();
    let mid = full
        .checkpoints
        .first()
        .expect("a mid-run checkpoint")
        .clone();
    assert_eq!(mid.meta.step, 4);
    let bytes = mid.to_bytes();
    let resumed = evolve_from(&cfg, &Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(resumed.params_final, full.params_final);
    assert_eq!(resumed.records.last(), full.records.last());
}

#[test]
fn no_dynamics_keeps_the_fit_error() {
    let mut cfg = small("still");
    cfg.problem = ProblemConfig::Transport { dim: 2, c: 0.0 };
    cfg.evolution.t_end = cfg.evolution.dt;
    cfg.output.cadence = 1;
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.records.len(), 2);
    assert_eq!(r.params_final, r.params_init);
    assert_eq!(r.records[0].abs_err, r.records[1].abs_err);
    assert_eq!(r.records[0].abs_err, r.fit.as_ref().unwrap().loss);
}

#[test]
fn sweep_mean_is_pointwise_mean() {
    let cfgs = vec![small("sweep")];
    let s = run_sweep(&cfgs, 2, false, 2).unwrap();
    assert_eq!(s.runs.len(), 2);
    let reps: Vec<_> = s.runs.iter().map(|r| r.2.as_ref().unwrap()).collect();
    assert_ne!(
        reps[0].params_init, reps[1].params_init,
        "repetitions use distinct seeds"
    );
    let m = &s.means[0];
    assert!(!m.incomplete());
    for (i, row) in m.rows.iter().enumerate() {
        let want = (reps[0].records[i].abs_err + reps[1].records[i].abs_err) / 2.0;
        assert!((row.2 - want).abs() <= 1e-15 * want.abs().max(1e-300));
    }
    // a single repetition is its own mean
    let one = mean_series("one", &reps[..1], 1);
    for (row, rec) in one.rows.iter().zip(&reps[0].records) {
        assert_eq!(row.2, rec.abs_err);
    }
}

#[test]
fn identical_seeds_give_identical_series() {
    let s = run_sweep(&[small("same")], 2, true, 1).unwrap();
    let a = s.runs[0].2.as_ref().unwrap();
    let b = s.runs[1].2.as_ref().unwrap();
    assert_eq!(errors_csv(&a.records), errors_csv(&b.records));
}

#[test]
fn outputs_written_and_loadable() {
    let cfg = small("out");
    let r = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), &cfg, &r).unwrap();
    for f in [
        "errors.csv",
        "norms.csv",
        "fit_trace.csv",
        "manifest.json",
        "params_init.bin",
        "params_final.bin",
        "params_final.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), ERRORS_HEADER);
    let back = Checkpoint::load(&dir.path().join("params_final.bin")).unwrap();
    let x = [0.3, -0.8];
    assert_eq!(
        back.params.eval_point(&x).to_bits(),
        r.params_final.eval_point(&x).to_bits()
    );
}

#[test]
fn empty_report_gives_header_only_csv() {
    assert_eq!(errors_csv(&[]), format!("{ERRORS_HEADER}\n"));
}

#[test]
fn manifest_echoes_every_config_field() {
    let cfg = small("manifest");
    let r = run_experiment(&cfg).unwrap();
    let m = manifest(&cfg, &r);
    let echoed: ExperimentConfig = serde_json::from_value(m["config"].clone()).unwrap();
    assert_eq!(echoed, cfg);
    let direct = serde_json::to_value(&cfg).unwrap();
    assert_eq!(
        direct.as_object().unwrap().keys().collect::<Vec<_>>(),
        m["config"].as_object().unwrap().keys().collect::<Vec<_>>()
    );
    assert_eq!(m["seeds"]["mask"], cfg.seeds.mask);
    assert_eq!(m["started_unix"], 0);
}

#[test]
fn io_errors_carry_the_path() {
    let cfg = small("io");
    let r = run_experiment(&cfg).unwrap();
    let file = tempfile::NamedTempFile::new().unwrap();
    let bad = file.path().join("sub");
    let e = write_run(&bad, &cfg, &r).unwrap_err();
    assert!(e.to_string().contains("sub"), "{e}");
    assert_eq!(e.exit_code(), 4);
}
