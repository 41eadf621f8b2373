use super::config::ExperimentConfig;
use crate::error::{GeomemError, Result};
use crate::util::sha256_hex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.json";

/// Output directory that records the SHA-256 of every file it writes.
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        for sub in ["checkpoints", "datasets", "analysis"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn open(dir: &Path, files: BTreeMap<String, String>) -> Self {
        Artifacts {
            dir: dir.to_path_buf(),
            files,
        }
    }

    /// Writes `rel` (relative, `/`-separated) and returns its digest.
    pub fn write(&mut self, rel: &str, content: &str) -> Result<String> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, content)?;
        let digest = sha256_hex(content.as_bytes());
        self.files.insert(rel.to_string(), digest.clone());
        Ok(digest)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub crate_version: String,
    pub name: String,
    pub status: String,
    /// The run's configuration, verbatim; a preset's list of run names.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub graph_hash: String,
    pub datasets: BTreeMap<String, String>,
    /// Relative path → SHA-256 of every output file.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let seeds = BTreeMap::from([
            ("graph".to_string(), cfg.seed),
            ("split".to_string(), cfg.seed),
            ("init".to_string(), cfg.seed),
            ("train".to_string(), cfg.train.seed),
        ]);
        Manifest {
            format: 1,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            name: cfg.name.clone(),
            status: "ok".into(),
            config: serde_json::to_value(cfg).expect("config serialises"),
            seeds,
            graph_hash: String::new(),
            datasets: BTreeMap::new(),
            files: BTreeMap::new(),
        }
    }

    pub fn for_preset(name: &str, config: serde_json::Value) -> Self {
        Manifest {
            format: 1,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            name: name.to_string(),
            status: "ok".into(),
            config,
            seeds: BTreeMap::new(),
            graph_hash: String::new(),
            datasets: BTreeMap::new(),
            files: BTreeMap::new(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(
            dir.join(MANIFEST),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| GeomemError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Recomputes every listed hash under `dir`, descending into nested
/// manifests. Returns the number of files checked.
pub fn verify(dir: &Path) -> Result<usize> {
    let manifest = Manifest::load(dir)?;
    let mut checked = 0;
    let mut bad = Vec::new();
    for (rel, want) in &manifest.files {
        let path = dir.join(rel);
        match std::fs::read(&path) {
            Ok(bytes) if &sha256_hex(&bytes) == want => checked += 1,
            Ok(_) => bad.push(format!("{rel}: hash mismatch")),
            Err(_) => bad.push(format!("{rel}: missing")),
        }
        if rel.ends_with(MANIFEST) {
            checked += verify(path.parent().unwrap_or(dir))?;
        }
    }
    if !bad.is_empty() {
        return Err(GeomemError::Config(format!(
            "{} failed verification: {}",
            dir.display(),
            bad.join("; ")
        )));
    }
    Ok(checked)
}
