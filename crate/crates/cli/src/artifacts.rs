//! Output files and the run manifest. All writes go through one
//! [`ArtifactWriter`], which hashes every file it produces.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    cli_version: &'static str,
    library_version: &'static str,
    verb: &'a str,
    seed: u64,
    threads: usize,
    started_unix: u64,
    wall_time_secs: f64,
    exit_code: i32,
    config: &'a serde_json::Value,
    files: &'a [FileEntry],
}

pub struct ArtifactWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
    started: Instant,
    started_unix: u64,
}

impl ArtifactWriter {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        })
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        std::fs::write(self.dir.join(name), contents)?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: contents.len(),
            sha256: hex::encode(Sha256::digest(contents)),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Numerical(format!("cannot serialize {name}: {e}")))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest.json`; it lists every file written before it.
    pub fn finish(
        self,
        verb: &str,
        seed: u64,
        config: &serde_json::Value,
        exit_code: i32,
    ) -> Result<(), CliError> {
        let manifest = Manifest {
            tool: "bifield",
            cli_version: env!("CARGO_PKG_VERSION"),
            library_version: bifield::VERSION,
            verb,
            seed,
            threads: rayon::current_num_threads(),
            started_unix: self.started_unix,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            exit_code,
            config,
            files: &self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}
