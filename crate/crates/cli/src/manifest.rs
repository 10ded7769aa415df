use std::collections::BTreeMap;
use std::path::Path;

use mvplc_core::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256(&std::fs::read(path)?))
}

/// Everything needed to reproduce a command's outputs, with digests of what
/// it read and wrote.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_text: &str) -> Self {
        Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_sha256: sha256(config_text.as_bytes()),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    /// Writes `bytes` to `dir/name` and records its digest.
    pub fn output(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(dir.join(name), bytes)?;
        self.outputs.insert(name.into(), sha256(bytes));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
