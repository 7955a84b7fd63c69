//! Config-driven pipeline stages behind the `persona` binary.
//!
//! Each stage reads its predecessors' files from the work directory and
//! writes its own; every file carries the config hash and seed.

use std::path::{Path, PathBuf};

pub mod artifacts;
pub mod config;
pub mod stages;

pub use config::{LoadedConfig, PipelineConfig, Violation};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config:\n{}", list(.0))]
    Config(Vec<Violation>),

    #[error("missing artifact: {}", .0.display())]
    Missing(PathBuf),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: persona_core::Error,
    },

    #[error("[{stage}] {message}")]
    Runtime { stage: &'static str, message: String },
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Stage { .. } | CliError::Runtime { .. } => 4,
        }
    }

    pub fn io(stage: &'static str, path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime {
            stage,
            message: format!("{}: {e}", path.display()),
        }
    }
}

pub trait StageResult<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageResult<T> for persona_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

/// Loads and validates; any violation is a config error.
pub fn load_valid(path: &Path) -> Result<LoadedConfig, CliError> {
    let lc = config::load(path).map_err(CliError::Config)?;
    let v = config::validate(&lc);
    if v.is_empty() {
        Ok(lc)
    } else {
        Err(CliError::Config(v))
    }
}
