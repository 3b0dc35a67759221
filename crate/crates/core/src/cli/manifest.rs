use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_to_string, write_string, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// What a subcommand ran with and what it wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Resolved configuration, defaults filled in.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputFile>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: "arterial".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn with_config<T: Serialize>(mut self, config: &T) -> Result<Self> {
        self.config = serde_json::to_value(config)?;
        Ok(self)
    }

    pub fn seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.into(), seed);
        self
    }

    /// Records `path`, made absolute, with its content hash.
    pub fn input(mut self, path: &Path) -> Result<Self> {
        let sha256 = sha256_file(path)?;
        let path = path.canonicalize().map_err(|e| Error::io(path, e))?;
        self.inputs.push(InputFile { path, sha256 });
        Ok(self)
    }

    pub fn artifact(mut self, name: &str) -> Self {
        self.artifacts.push(name.into());
        self
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        write_string(&path, &serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_to_string(path)?)?)
    }

    /// Re-hashes every input and fails on the first one that changed.
    pub fn verify_inputs(&self) -> Result<()> {
        for f in &self.inputs {
            let found = sha256_file(&f.path)?;
            if found != f.sha256 {
                return Err(Error::Fingerprint {
                    expected: format!("{} {}", f.path.display(), f.sha256),
                    found,
                });
            }
        }
        Ok(())
    }

    /// Artifact hashes, for comparing two runs.
    pub fn artifact_hashes(&self, dir: &Path) -> Result<BTreeMap<String, String>> {
        self.artifacts
            .iter()
            .map(|a| Ok((a.clone(), sha256_file(&dir.join(a))?)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "abc").unwrap();
        let m = RunManifest::new("synth")
            .seed("seed", 7)
            .input(&input)
            .unwrap()
            .artifact("out.csv");
        // sha256("abc")
        assert_eq!(
            m.inputs[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let path = m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
        m.verify_inputs().unwrap();
        std::fs::write(&input, "abd").unwrap();
        assert!(matches!(m.verify_inputs(), Err(Error::Fingerprint { .. })));
    }
}
