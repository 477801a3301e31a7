//! Experiment configuration: a single TOML document with a versioned schema.
//! Unknown keys are rejected so that the manifest echo is authoritative.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tnn_core::galerkin::{Integrator, DEFAULT_RCOND};
use tnn_core::{
    composite_rule, gauss_legendre, Activation, FitConfig, PartitionKind, PartitionStrategy,
    PdeProblem, QuadratureRule1D, Selection, TnnArchitecture,
};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub problem: ProblemConfig,
    pub architecture: ArchitectureConfig,
    pub quadrature: QuadratureConfig,
    pub evolution: EvolutionConfig,
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub fit: FitConfig,
    pub output: OutputConfig,
    pub seeds: Seeds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Transport { dim: usize, c: f64 },
    Heat { dim: usize, nu: f64 },
    Kdv { dim: usize, c: f64 },
    NavierStokes { nu: f64, u0: f64 },
}

impl ProblemConfig {
    pub fn build(&self) -> PdeProblem {
        match *self {
            ProblemConfig::Transport { dim, c } => PdeProblem::transport(dim, c),
            ProblemConfig::Heat { dim, nu } => PdeProblem::heat(dim, nu),
            ProblemConfig::Kdv { dim, c } => PdeProblem::kdv(dim, c),
            ProblemConfig::NavierStokes { nu, u0 } => PdeProblem::navier_stokes(nu, u0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub hidden: Vec<usize>,
    pub rank: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Gauss-Legendre points per panel
    pub points: usize,
    pub panels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    #[serde(default = "default_rcond")]
    pub rcond: f64,
}

fn default_rcond() -> f64 {
    DEFAULT_RCOND
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: PartitionKind,
    /// fraction of each sub-network's parameters
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    /// parameters per sub-network
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    /// steps between error records
    pub cadence: u64,
    #[serde(default = "yes")]
    pub deterministic: bool,
    /// cadence ticks between intermediate checkpoints (0: none)
    #[serde(default)]
    pub checkpoint_every: u64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    pub mask: u64,
    pub fit: u64,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(s).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.problem
            .build()
            .validate()
            .map_err(CliError::from_config)?;
        self.arch().map_err(CliError::from_config)?;
        if self.quadrature.points == 0 || self.quadrature.panels == 0 {
            return bad("quadrature needs at least one point and one panel".into());
        }
        let e = &self.evolution;
        if !(e.dt > 0.0 && e.dt.is_finite()) {
            return bad("evolution.dt must be positive".into());
        }
        if !(e.t_end > 0.0 && e.t_end.is_finite()) {
            return bad("evolution.t_end must be positive".into());
        }
        if !(e.rcond > 0.0 && e.rcond < 1.0) {
            return bad("evolution.rcond must lie in (0, 1)".into());
        }
        if self.output.cadence == 0 {
            return bad("output.cadence must be at least 1".into());
        }
        self.fit.validate().map_err(CliError::from_config)?;
        let arch = self.arch().map_err(CliError::from_config)?;
        self.partition_strategy()?
            .count_per_subnet(&arch)
            .map_err(CliError::from_config)?;
        Ok(())
    }

    pub fn arch(&self) -> tnn_core::Result<TnnArchitecture> {
        let problem = self.problem.build();
        let mut arch = TnnArchitecture::new(
            problem.dim,
            self.architecture.rank,
            self.architecture.hidden.clone(),
            problem.natural_input_map(),
            problem.domain,
        )?;
        arch.activation = self.architecture.activation;
        Ok(arch)
    }

    pub fn rules(&self) -> tnn_core::Result<Vec<QuadratureRule1D>> {
        let problem = self.problem.build();
        let base = gauss_legendre(self.quadrature.points)?;
        let rule = composite_rule(&base, self.quadrature.panels, problem.domain)?;
        Ok(vec![rule; problem.dim])
    }

    pub fn partition_strategy(&self) -> Result<PartitionStrategy, CliError> {
        let s = &self.strategy;
        let selection = match (s.kind, s.ratio, s.count) {
            (PartitionKind::Full, _, _) => Selection::Ratio(1.0),
            (_, Some(r), None) => Selection::Ratio(r),
            (_, None, Some(c)) => Selection::Count(c),
            (_, Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "strategy takes either ratio or count, not both".into(),
                ))
            }
            (_, None, None) => {
                return Err(CliError::Config("strategy needs a ratio or a count".into()))
            }
        };
        Ok(PartitionStrategy {
            kind: s.kind,
            selection,
            seed: self.seeds.mask,
        })
    }

    /// Number of steps to reach `t_end`.
    pub fn steps(&self) -> u64 {
        (self.evolution.t_end / self.evolution.dt).round().max(1.0) as u64
    }

    /// Copy with every seed shifted by `rep`, for sweep repetitions.
    pub fn with_repetition(&self, rep: u64) -> Self {
        let mut c = self.clone();
        c.seeds.init = c.seeds.init.wrapping_add(rep);
        c.seeds.mask = c.seeds.mask.wrapping_add(rep);
        c.seeds.fit = c.seeds.fit.wrapping_add(rep);
        c.fit.seed = c.seeds.fit;
        c
    }
}
