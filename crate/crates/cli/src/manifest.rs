use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest(path: &Path) -> CliResult<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: format!("{:x}", Sha256::digest(&bytes)),
    })
}

/// Everything needed to rerun a command and compare its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub tool_version: &'static str,
    pub started_unix: u64,
    pub wall_seconds: f64,
}

pub struct Recorder {
    command: &'static str,
    started: SystemTime,
    clock: Instant,
    inputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: SystemTime::now(),
            clock: Instant::now(),
            inputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn finish(
        self,
        config: impl Serialize,
        seeds: Vec<u64>,
        outputs: &[PathBuf],
        manifest: &Path,
    ) -> CliResult<()> {
        let manifest_value = RunManifest {
            command: self.command.to_string(),
            args: std::env::args().collect(),
            config: serde_json::to_value(config).map_err(nlcap::Error::from)?,
            seeds,
            inputs: self
                .inputs
                .iter()
                .map(|p| digest(p))
                .collect::<CliResult<_>>()?,
            outputs: outputs
                .iter()
                .map(|p| digest(p))
                .collect::<CliResult<_>>()?,
            tool_version: env!("CARGO_PKG_VERSION"),
            started_unix: self
                .started
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            wall_seconds: self.clock.elapsed().as_secs_f64(),
        };
        nlcap::io::write_json(manifest, &manifest_value)?;
        Ok(())
    }
}

/// `dir/name.csv` -> `dir/name.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}
