//! Artifact writing. Floats use Rust's shortest round-trip formatting, so
//! identical inputs give identical bytes.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::{CliError, CliResult};

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let err = |e: csv::Error| CliError::Write {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(&self.header).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush().map_err(|source| CliError::Write {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn res<E: std::fmt::Display>(v: &Result<f64, E>) -> String {
    v.as_ref().map(|x| num(*x)).unwrap_or_default()
}

/// Creates `<out_dir>/<name>` and writes the resolved configuration into it.
pub fn command_dir(cfg: &RunConfig, name: &str) -> CliResult<PathBuf> {
    let dir = cfg.out_dir.join(name);
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Write {
        path: dir.clone(),
        source,
    })?;
    // The output location is left out so the echo is identical wherever the
    // artifacts are written.
    let mut echo = cfg.clone();
    echo.out_dir = PathBuf::from(".");
    write_text(&dir.join("config.toml"), &echo.to_toml())?;
    Ok(dir)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    write_text(path, &(text + "\n"))
}

/// File-name label of an affinity value.
pub fn lambda_label(l: f64) -> String {
    format!("lambda_{l}")
}
