//! Run directories and their manifests.
//!
//! Layout: `<root>/<experiment-id>/{manifest.json, checkpoints/, reports/, traces/}`
//! where the root is `$UNLEARN_FORGE_RUNS_DIR` or `runs`.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const RUNS_DIR_ENV: &str = "UNLEARN_FORGE_RUNS_DIR";
pub const MANIFEST: &str = "manifest.json";

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    match std::fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact(path.to_path_buf())),
        Err(e) => Err(Error::io(path, e)),
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_file(path)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Checkpoints,
    Reports,
    Traces,
}

impl Kind {
    fn dir(self) -> &'static str {
        match self {
            Kind::Checkpoints => "checkpoints",
            Kind::Reports => "reports",
            Kind::Traces => "traces",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Inputs: the path as given. Outputs: relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_secs: f64,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment_id: String,
    pub command: String,
    pub seed: Option<u64>,
    /// Fully resolved configuration.
    pub config: Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub tool_version: String,
    pub timing: Timing,
}

/// First 16 hex digits of the SHA-256 of the command, resolved config, seed
/// and input hashes. Object keys serialise sorted, so the hash is canonical.
pub fn experiment_id(command: &str, config: &Value, seed: Option<u64>, inputs: &[Artifact]) -> String {
    let hashes: Vec<&str> = inputs.iter().map(|a| a.sha256.as_str()).collect();
    let canon = json!({ "command": command, "config": config, "seed": seed, "inputs": hashes });
    sha256_hex(canon.to_string().as_bytes())[..16].to_string()
}

/// A run being written. Artifacts are recorded as they are saved; the
/// manifest is written once, by [`RunDir::finish`].
pub struct RunDir {
    dir: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl RunDir {
    pub fn create(command: &str, config: Value, seed: Option<u64>, inputs: &[&Path]) -> Result<Self> {
        Self::create_in(&runs_root(), command, config, seed, inputs)
    }

    pub fn create_in(root: &Path, command: &str, config: Value, seed: Option<u64>, inputs: &[&Path]) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| Ok(Artifact { path: p.display().to_string(), sha256: file_sha256(p)? }))
            .collect::<Result<Vec<_>>>()?;
        let id = experiment_id(command, &config, seed, &inputs);
        let dir = root.join(&id);
        for k in [Kind::Checkpoints, Kind::Reports, Kind::Traces] {
            let d = dir.join(k.dir());
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let started_unix_secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        Ok(Self {
            dir,
            manifest: RunManifest {
                experiment_id: id,
                command: command.into(),
                seed,
                config,
                inputs,
                outputs: Vec::new(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                timing: Timing { started_unix_secs, wall_clock_secs: 0.0 },
            },
            started: Instant::now(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn id(&self) -> &str {
        &self.manifest.experiment_id
    }

    /// Writes `bytes` under `kind/name` and records its hash.
    pub fn write(&mut self, kind: Kind, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let rel = format!("{}/{name}", kind.dir());
        let path = self.dir.join(&rel);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.outputs.retain(|a| a.path != rel);
        self.manifest.outputs.push(Artifact { path: rel, sha256: sha256_hex(bytes) });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, kind: Kind, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(kind, name, s.as_bytes())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.timing.wall_clock_secs = self.started.elapsed().as_secs_f64();
        let path = self.dir.join(MANIFEST);
        let mut s = serde_json::to_string_pretty(&self.manifest)?;
        s.push('\n');
        std::fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
        Ok(self.dir)
    }
}

pub fn load_manifest(run_dir: &Path) -> Result<RunManifest> {
    let path = run_dir.join(MANIFEST);
    Ok(serde_json::from_slice(&read_file(&path)?)?)
}

/// Every output exists under `run_dir` and matches its recorded hash.
pub fn verify_manifest(run_dir: &Path) -> Result<RunManifest> {
    let m = load_manifest(run_dir)?;
    for a in &m.outputs {
        let p = run_dir.join(&a.path);
        let actual = file_sha256(&p)?;
        if actual != a.sha256 {
            return Err(Error::HashMismatch { path: p, expected: a.sha256.clone(), actual });
        }
    }
    Ok(m)
}
