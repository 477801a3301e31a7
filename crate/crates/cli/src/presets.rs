//! Canned experiments. A preset name maps to one or more configurations
//! (ablation suites expand to one configuration per variant).

use std::f64::consts::PI;

use tnn_core::galerkin::Integrator;
use tnn_core::{Activation, FitConfig, PartitionKind};

use crate::config::*;

const NAMES: &[&str] = &[
    "transport-2d",
    "transport-3d",
    "transport-10d",
    "heat-10d",
    "kdv-10d",
    "kdv-15d",
    "kdv-20d",
    "ns-taylor-green",
    "ablation-fixed",
    "ablation-random",
    "ablation-first-layer",
    "long-horizon",
];

pub fn names() -> &'static [&'static str] {
    NAMES
}

/// Ratios of the partition ablations, largest first.
pub const ABLATION_RATIOS: [f64; 6] = [1.0, 5.0 / 6.0, 2.0 / 3.0, 0.5, 1.0 / 3.0, 1.0 / 6.0];

fn fit() -> FitConfig {
    FitConfig {
        max_iterations: 200,
        learning_rate: 1e-5,
        min_learning_rate: 1e-8,
        prefit_iterations: 3000,
        prefit_learning_rate: 1e-2,
        target_error: 1e-7,
        seed: 3,
        trace_every: 50,
    }
}

fn base(name: &str, problem: ProblemConfig, hidden: Vec<usize>) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        problem,
        architecture: ArchitectureConfig {
            hidden,
            rank: 2,
            activation: Activation::Tanh,
        },
        quadrature: QuadratureConfig {
            points: 8,
            panels: 4,
        },
        evolution: EvolutionConfig {
            dt: 1e-3,
            t_end: 1.0,
            integrator: Integrator::ModifiedEuler,
            rcond: 1e-10,
        },
        strategy: StrategyConfig {
            kind: PartitionKind::Full,
            ratio: None,
            count: None,
        },
        fit: fit(),
        output: OutputConfig {
            dir: name.to_string(),
            cadence: 100,
            deterministic: true,
            checkpoint_every: 0,
        },
        seeds: Seeds {
            init: 1,
            mask: 2,
            fit: 3,
        },
    }
}

fn ratio_strategy(kind: PartitionKind, ratio: f64) -> StrategyConfig {
    if ratio >= 1.0 {
        return StrategyConfig {
            kind: PartitionKind::Full,
            ratio: None,
            count: None,
        };
    }
    StrategyConfig {
        kind,
        ratio: Some(ratio),
        count: None,
    }
}

fn ratio_tag(r: f64) -> String {
    let sixths = (r * 6.0).round() as u32;
    format!("{sixths}of6")
}

fn transport_3d(name: &str) -> ExperimentConfig {
    let mut c = base(
        name,
        ProblemConfig::Transport { dim: 3, c: 1.0 },
        vec![20, 20],
    );
    c.evolution.t_end = 5.0;
    c
}

/// Every configuration of a preset, or `None` for an unknown name.
pub fn suite(name: &str) -> Option<Vec<ExperimentConfig>> {
    let one = |c: ExperimentConfig| Some(vec![c]);
    match name {
        "transport-2d" => {
            let mut c = base(
                name,
                ProblemConfig::Transport { dim: 2, c: 1.0 },
                vec![20, 20],
            );
            c.evolution.t_end = 10.0;
            one(c)
        }
        "transport-3d" => one(transport_3d(name)),
        "transport-10d" => {
            let mut c = base(
                name,
                ProblemConfig::Transport { dim: 10, c: 1.0 },
                vec![30, 30],
            );
            c.strategy = StrategyConfig {
                kind: PartitionKind::RandomPerStep,
                ratio: None,
                count: Some(200),
            };
            c.evolution.integrator = Integrator::Rk4;
            one(c)
        }
        "heat-10d" => {
            let mut c = base(
                name,
                ProblemConfig::Heat {
                    dim: 10,
                    nu: 1.0 / (PI * PI),
                },
                vec![30, 30, 30],
            );
            c.strategy = StrategyConfig {
                kind: PartitionKind::RandomPerStep,
                ratio: None,
                count: Some(200),
            };
            c.evolution.t_end = 0.2;
            c.output.cadence = 10;
            one(c)
        }
        "kdv-10d" | "kdv-15d" | "kdv-20d" => {
            let dim = name[4..6]
                .parse()
                .expect("preset name carries the dimension");
            let mut c = base(name, ProblemConfig::Kdv { dim, c: 1.0 }, vec![30, 30]);
            c.strategy = StrategyConfig {
                kind: PartitionKind::RandomPerStep,
                ratio: None,
                count: Some(200),
            };
            c.evolution.integrator = Integrator::Rk4;
            one(c)
        }
        "ns-taylor-green" => {
            let mut c = base(
                name,
                ProblemConfig::NavierStokes { nu: 1.0, u0: 1.0 },
                vec![30, 30],
            );
            c.evolution.integrator = Integrator::Rk4;
            c.evolution.dt = 5e-3;
            c.evolution.rcond = 1e-12;
            c.output.cadence = 10;
            one(c)
        }
        "ablation-fixed" | "ablation-random" => {
            let kind = if name == "ablation-fixed" {
                PartitionKind::Fixed
            } else {
                PartitionKind::RandomPerStep
            };
            Some(
                ABLATION_RATIOS
                    .iter()
                    .map(|&r| {
                        let mut c = transport_3d(&format!("{name}-{}", ratio_tag(r)));
                        c.strategy = ratio_strategy(kind, r);
                        c
                    })
                    .collect(),
            )
        }
        "ablation-first-layer" => Some(
            [
                PartitionKind::WithFirstLayer,
                PartitionKind::WithoutFirstLayer,
                PartitionKind::WithoutBias,
                PartitionKind::RandomPerStep,
            ]
            .iter()
            .map(|&kind| {
                let tag = serde_json::to_value(kind)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default();
                let mut c = transport_3d(&format!("{name}-{tag}"));
                c.strategy = ratio_strategy(kind, 1.0 / 3.0);
                c.evolution.integrator = Integrator::Rk4;
                c.evolution.dt = 2e-3;
                c
            })
            .collect(),
        ),
        "long-horizon" => {
            let mut c = transport_3d(name);
            c.strategy = ratio_strategy(PartitionKind::WithFirstLayer, 1.0 / 3.0);
            c.evolution.integrator = Integrator::Rk4;
            c.evolution.dt = 2e-3;
            c.evolution.t_end = 50.0;
            c.output.cadence = 500;
            one(c)
        }
        _ => None,
    }
}
