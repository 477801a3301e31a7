//! Config-driven experiment runner around `tnn-core`: TOML configs, presets,
//! checkpoints, run directories and sweeps.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod output;
pub mod presets;
pub mod runner;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::CliError;

/// Resolves a config argument: a file path or `preset:<name>`.
pub fn resolve_configs(arg: &str) -> Result<Vec<ExperimentConfig>, CliError> {
    match arg.strip_prefix("preset:") {
        Some(name) => presets::suite(name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown preset {name:?}; available: {}",
                presets::names().join(", ")
            ))
        }),
        None => Ok(vec![ExperimentConfig::load(std::path::Path::new(arg))?]),
    }
}
