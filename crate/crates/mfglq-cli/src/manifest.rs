//! Run manifest: records everything that determines a run's outputs plus a
//! content hash per emitted artifact, so identical manifests imply
//! byte-identical artifacts.

use std::path::{Path, PathBuf};

use serde::Serialize;

use mfglq::export::fnv1a64;
use mfglq::Result;

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    pub fnv1a64: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<String>,
    pub out_dir: String,
    pub seed: u64,
    pub agents: Option<usize>,
    pub agent_counts: Option<Vec<usize>>,
    pub scenarios: Option<u64>,
    pub steps: usize,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(subcommand: &str, out_dir: &Path, seed: u64, steps: usize) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config_path: None,
            out_dir: out_dir.display().to_string(),
            seed,
            agents: None,
            agent_counts: None,
            scenarios: None,
            steps,
            artifacts: Vec::new(),
        }
    }

    pub fn record(&mut self, out_dir: &Path, path: &PathBuf) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let rel = path.strip_prefix(out_dir).unwrap_or(path);
        self.artifacts.push(Artifact {
            path: rel.display().to_string(),
            bytes: bytes.len() as u64,
            fnv1a64: format!("{:016x}", fnv1a64(&bytes)),
        });
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join("manifest.json");
        mfglq::export::write_json(&path, self)?;
        Ok(path)
    }
}
