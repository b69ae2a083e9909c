//! `IEUC` binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "IEUC" | u32 version | u8 role | u64 root_seed
//! | u32 len | model spec JSON | u32 len | config JSON
//! | u64 d | d × f64 θ | 32-byte SHA-256 of everything before it
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ForgeError, Result};
use crate::models::ModelSpec;
use crate::numcore::ParamVector;

pub const MAGIC: &[u8; 4] = b"IEUC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Original,
    Retrain,
    ForgetOracle,
    Unlearned,
}

impl Role {
    fn code(self) -> u8 {
        match self {
            Role::Original => 0,
            Role::Retrain => 1,
            Role::ForgetOracle => 2,
            Role::Unlearned => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => Role::Original,
            1 => Role::Retrain,
            2 => Role::ForgetOracle,
            3 => Role::Unlearned,
            _ => return Err(ForgeError::Format(format!("unknown checkpoint role {c}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub role: Role,
    pub root_seed: u64,
    pub spec: ModelSpec,
    /// Training or unlearning configuration, including the stopping rule.
    pub config: serde_json::Value,
    pub theta: ParamVector,
}

impl Checkpoint {
    pub fn new(role: Role, root_seed: u64, spec: ModelSpec, config: serde_json::Value, theta: ParamVector) -> Result<Self> {
        spec.validate()?;
        if spec.param_count() != theta.dim() {
            return Err(ForgeError::DimensionMismatch { expected: spec.param_count(), got: theta.dim() });
        }
        Ok(Self { role, root_seed, spec, config, theta })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let spec = serde_json::to_vec(&self.spec)?;
        let config = serde_json::to_vec(&self.config)?;
        let mut out = Vec::with_capacity(64 + spec.len() + config.len() + 8 * self.theta.dim());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.role.code());
        out.extend_from_slice(&self.root_seed.to_le_bytes());
        for blob in [&spec, &config] {
            let len = u32::try_from(blob.len()).map_err(|_| ForgeError::Format("JSON section too large".into()))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(blob);
        }
        out.extend_from_slice(&(self.theta.dim() as u64).to_le_bytes());
        for x in self.theta.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let hash = Sha256::digest(&out);
        out.extend_from_slice(&hash);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 1 + 8 + 4 + 4 + 8 + 32 {
            return Err(ForgeError::Format("checkpoint truncated".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(ForgeError::Format("bad checkpoint magic".into()));
        }
        let (body, stored) = bytes.split_at(bytes.len() - 32);
        let computed = Sha256::digest(body);
        if computed.as_slice() != stored {
            return Err(ForgeError::HashMismatch { stored: hex::encode(stored), computed: hex::encode(computed) });
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(ForgeError::Version { found: version, supported: FORMAT_VERSION });
        }
        let role = Role::from_code(r.take(1)?[0])?;
        let root_seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let spec_len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
        let spec: ModelSpec = serde_json::from_slice(r.take(spec_len)?)?;
        let config_len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
        let config: serde_json::Value = serde_json::from_slice(r.take(config_len)?)?;
        let d = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
        let raw = r.take(d.checked_mul(8).ok_or_else(|| ForgeError::Format("dimension overflow".into()))?)?;
        if r.pos != body.len() {
            return Err(ForgeError::Format("trailing bytes after parameters".into()));
        }
        let theta = ParamVector::new(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())?;
        Checkpoint::new(role, root_seed, spec, config, theta)
    }

    /// Hex SHA-256 stored in the serialised form.
    pub fn content_hash(&self) -> Result<String> {
        let bytes = self.to_bytes()?;
        Ok(hex::encode(&bytes[bytes.len() - 32..]))
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes)?;
        Ok(hex::encode(&bytes[bytes.len() - 32..]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ForgeError::Format("checkpoint truncated".into())),
        }
    }
}
