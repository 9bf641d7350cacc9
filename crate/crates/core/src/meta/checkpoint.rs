//! Binary parameter checkpoints plus a JSON sidecar.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MGRE" | version: u32 | n_sizes: u32 | n_sizes x size: u64 | n_params: u64 | n_params x f64
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MetaConfig;
use crate::error::{Error, Result};
use crate::numcore::{MlpSpec, ParamVector};
use crate::tasks::TaskFamily;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MGRE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub layer_sizes: Vec<usize>,
    pub params: ParamVector,
}

pub fn encode_checkpoint(layer_sizes: &[usize], params: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * layer_sizes.len() + 8 * params.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(layer_sizes.len() as u32).to_le_bytes());
    for &s in layer_sizes {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err("missing MGRE magic".into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let n_sizes = r.u32()? as usize;
    let layer_sizes = (0..n_sizes)
        .map(|_| r.u64().map(|v| v as usize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let n_params = r.u64()? as usize;
    let expected: usize = layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
    if n_params != expected {
        return Err(format!(
            "{n_params} parameters recorded but layers {layer_sizes:?} need {expected}"
        ));
    }
    let raw = r.take(n_params.checked_mul(8).ok_or("parameter count overflow")?)?;
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = ParamVector::new(values).map_err(|e| e.to_string())?;
    Ok(Checkpoint {
        layer_sizes,
        params,
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    decode_inner(bytes).map_err(|reason| Error::Checkpoint {
        path: PathBuf::from("<memory>"),
        reason,
    })
}

pub fn write_checkpoint(path: &Path, spec: &MlpSpec, params: &ParamVector) -> Result<()> {
    if params.len() != spec.param_count() {
        return Err(Error::shape(
            "checkpoint parameters",
            spec.param_count(),
            params.len(),
        ));
    }
    std::fs::write(path, encode_checkpoint(&spec.layer_sizes, params))
        .map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_inner(&bytes).map_err(|reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })
}

/// Everything needed to reuse a checkpoint without its experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSidecar {
    pub config: MetaConfig,
    pub spec: MlpSpec,
    pub family: TaskFamily,
    /// Outer iterations already applied to the stored parameters.
    pub iterations_done: usize,
}

impl CheckpointSidecar {
    /// `model.mgre` -> `model.json`
    pub fn path_for(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("json")
    }
}

pub fn write_sidecar(path: &Path, sidecar: &CheckpointSidecar) -> Result<()> {
    let mut text = serde_json::to_string_pretty(sidecar)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<CheckpointSidecar> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
