//! Batch front end: configuration, data loading, the subcommands and their
//! CSV/JSON artifacts.

pub mod commands;
pub mod config;
pub mod data;
pub mod output;
pub mod report;
pub mod synthetic;

use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] esgval::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for bad inputs, 1 for failed computations.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_input_error() => 2,
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    /// Machine-readable description printed on failure.
    pub fn to_json(&self) -> serde_json::Value {
        let (kind, path) = match self {
            CliError::Core(esgval::Error::Io { path, .. }) => ("io", Some(path.display().to_string())),
            CliError::Core(e) if e.is_input_error() => ("input", None),
            CliError::Core(_) => ("computation", None),
            CliError::Config(_) => ("config", None),
            CliError::Write { path, .. } => ("output", Some(path.display().to_string())),
        };
        let mut v = json!({
            "error": kind,
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let Some(p) = path {
            v["path"] = json!(p);
        }
        v
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
