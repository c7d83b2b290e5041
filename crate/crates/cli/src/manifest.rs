//! Run manifests: one JSON file per command invocation, written before the
//! run starts and rewritten when it ends. Together with the listed input
//! digests, the argv and resolved configuration reproduce the run.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use switchnet::data::write_atomic;

#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> std::io::Result<Self> {
        let data = std::fs::read(path)?;
        Ok(Self {
            path: path.display().to_string(),
            bytes: data.len() as u64,
            sha256: hex(&Sha256::digest(&data)),
        })
    }
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Ok,
    Failed,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub seed: u64,
    /// Resolved configuration as `key = value` text.
    pub config: String,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub status: Status,
    pub error: Option<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    #[serde(skip)]
    path: PathBuf,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    /// Writes the initial `running` manifest to `manifest-<command>.json`.
    pub fn start(out_dir: &Path, command: &str, seed: u64, config: String, inputs: &[&Path]) -> std::io::Result<Self> {
        let inputs = inputs.iter().map(|p| Artifact::of(p)).collect::<std::io::Result<_>>()?;
        let manifest = Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            inputs,
            outputs: Vec::new(),
            status: Status::Running,
            error: None,
            started_unix: now(),
            finished_unix: None,
            path: out_dir.join(format!("manifest-{command}.json")),
        };
        manifest.write()?;
        Ok(manifest)
    }

    fn write(&self) -> std::io::Result<()> {
        let mut json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        json.push('\n');
        write_atomic(&self.path, json.as_bytes())
    }

    pub fn succeed(mut self, outputs: &[PathBuf]) -> std::io::Result<()> {
        self.outputs = outputs
            .iter()
            .map(|p| Artifact::of(p))
            .collect::<std::io::Result<_>>()?;
        self.status = Status::Ok;
        self.finished_unix = Some(now());
        self.write()
    }

    pub fn fail(mut self, error: &str) -> std::io::Result<()> {
        self.status = Status::Failed;
        self.error = Some(error.to_string());
        self.finished_unix = Some(now());
        self.write()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, b"abc").unwrap();
        let a = Artifact::of(&p).unwrap();
        assert_eq!(
            a.sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(a.bytes, 3);
    }
}
