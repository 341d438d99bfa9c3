//! Output directory with a manifest of everything written to it.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
struct Entry {
    path: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config: Option<String>,
    status: &'a str,
    files: &'a [Entry],
}

pub struct Output {
    dir: PathBuf,
    command: String,
    seed: u64,
    config: Option<String>,
    files: Vec<Entry>,
}

impl Output {
    pub fn create(dir: &Path, command: &str, seed: u64, config: Option<&Path>) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            seed,
            config: config.map(|p| p.display().to_string()),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| io_error(&path, e))?;
        let digest = Sha256::digest(contents.as_bytes());
        self.files.retain(|f| f.path != name);
        self.files.push(Entry { path: name.to_string(), bytes: contents.len(), sha256: format!("{digest:x}") });
        log::info!("wrote {}", path.display());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    /// Writes `manifest.json`; `status` is "ok" or the error message.
    pub fn finish(&mut self, status: &str) -> CliResult<()> {
        let manifest = Manifest {
            command: &self.command,
            seed: self.seed,
            config: self.config.clone(),
            status,
            files: &self.files,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Numerical(e.to_string()))?;
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))
    }
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), source }
}
