//! Versioned binary container of named f64 tensors plus a JSON header.
//!
//! ```text
//! magic "SPGC" | u32 version | u64 header length | header JSON
//! u32 tensor count | per tensor: u32 name length, name, u32 rows, u32 cols, rows·cols f64
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EngineError, TrainConfig, TrainState};
use crate::corpus::LabelSchema;
use crate::encoder::Vocab;
use crate::model::ModelConfig;
use crate::tensor::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPGC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Tensor name prefixes inside a checkpoint.
pub const PARAM_PREFIX: &str = "param.";
pub const BEST_PREFIX: &str = "best.";
pub const VELOCITY_PREFIX: &str = "velocity.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schema: LabelSchema,
    pub vocab: Vocab,
    pub state: TrainState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Matrix)>,
}

fn corrupt(path: &Path, msg: impl Into<String>) -> EngineError {
    EngineError::Checkpoint {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EngineError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt(self.path, "truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, EngineError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, EngineError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, EngineError> {
        let header = serde_json::to_vec(&self.header).map_err(|e| EngineError::Config(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, m) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self, EngineError> {
        let mut r = Reader { buf, pos: 0, path };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(corrupt(path, "not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(
                path,
                format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
            ));
        }
        let len = r.u64()? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(len)?).map_err(|e| corrupt(path, format!("bad header: {e}")))?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| corrupt(path, "tensor name is not UTF-8"))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let count = rows
                .checked_mul(cols)
                .filter(|c| c.checked_mul(8).is_some())
                .ok_or_else(|| corrupt(path, "tensor too large"))?;
            let raw = r.take(count * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = Matrix::from_shape_vec((rows, cols), data).expect("length checked");
            tensors.push((name, m));
        }
        if r.pos != buf.len() {
            return Err(corrupt(path, "trailing bytes"));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EngineError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| EngineError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| EngineError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut ck = Self::from_bytes(&buf, path)?;
        ck.header.vocab.reindex();
        Ok(ck)
    }

    /// Loads and rejects checkpoints trained on a different label schema.
    pub fn load_for(path: impl AsRef<Path>, schema: &LabelSchema) -> Result<Self, EngineError> {
        let ck = Self::load(path)?;
        if &ck.header.schema != schema {
            return Err(EngineError::SchemaMismatch);
        }
        Ok(ck)
    }
}
