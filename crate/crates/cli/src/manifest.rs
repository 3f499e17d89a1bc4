use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use stalevol::config::RunConfig;
use stalevol::io::write_json;
use stalevol::{Error, Flag, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub seed: u64,
    pub replications: Vec<u64>,
    pub timings: Vec<StageTiming>,
    pub files: Vec<FileEntry>,
    pub flags: Vec<Flag>,
}

/// Collects timings, files and flags while a command runs.
pub struct Recorder {
    manifest: RunManifest,
    out: PathBuf,
    paths: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, cfg: &RunConfig, out: &Path, replications: Vec<u64>) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Recorder {
            manifest: RunManifest {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config: cfg.clone(),
                seed: cfg.sim.seed,
                replications,
                timings: Vec::new(),
                files: Vec::new(),
                flags: Vec::new(),
            },
            out: out.to_path_buf(),
            paths: Vec::new(),
        })
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let value = f()?;
        self.manifest.timings.push(StageTiming {
            stage: name.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(value)
    }

    pub fn files(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.paths.extend(paths);
    }

    pub fn flags(&mut self, flags: impl IntoIterator<Item = Flag>) {
        self.manifest.flags.extend(flags);
    }

    /// Hash every output and write the manifest; returns its path.
    pub fn finish(mut self) -> Result<PathBuf> {
        for p in &self.paths {
            let bytes = fs::read(p)?;
            if bytes.is_empty() {
                return Err(Error::Input(format!("output file {} is empty", p.display())));
            }
            let rel = p.strip_prefix(&self.out).unwrap_or(p);
            self.manifest.files.push(FileEntry {
                path: rel.display().to_string(),
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        let path = self.out.join(MANIFEST_FILE);
        write_json(&path, &self.manifest)?;
        Ok(path)
    }
}
