//! `manifest.json`: config echo, seed, input digests, outputs and wall time.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    /// `expr`, `lr_db`, `checkpoint`, …
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_secs: f64,
    pub status: String,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(hex::encode(h.finalize()))
}

impl InputDigest {
    pub fn of(role: &str, path: &Path) -> CliResult<Self> {
        Ok(Self { role: role.into(), path: path.to_path_buf(), sha256: sha256_file(path)? })
    }
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.to_pairs().into_iter().collect(),
            seed: cfg.train.seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_time_secs: 0.0,
            status: "ok".into(),
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn run_config(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        for (k, v) in &self.config {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn input(&self, role: &str) -> Option<&InputDigest> {
        self.inputs.iter().find(|i| i.role == role)
    }

    /// Fails when a recorded input no longer has its recorded digest.
    pub fn verify_inputs(&self) -> CliResult<()> {
        for i in &self.inputs {
            let now = sha256_file(&i.path)?;
            if now != i.sha256 {
                return Err(CliError::usage(format!("{} changed since the manifest was written", i.path.display())));
            }
        }
        Ok(())
    }
}
