//! Model checkpoint file.
//!
//! ```text
//! magic      b"FSRCKPT\0"
//! version    u32
//! vocab_size u32, feat_dim u32, hidden u32, context u32, subsample u32
//! step       u64   training steps completed
//! tensors    f64 little-endian, in `PARAMETER_NAMES` order, row-major
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{write_atomically, Reader};
use crate::model::{ModelConfig, TinyTransducer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FSRCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TinyTransducer,
    pub step: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.model.config;
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for dim in [c.vocab_size, c.feat_dim, c.hidden, c.context, c.subsample] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        buf.extend_from_slice(&self.step.to_le_bytes());
        for m in self.model.params.tensors() {
            for x in m.as_slice() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let config = ModelConfig {
            vocab_size: dims[0],
            feat_dim: dims[1],
            hidden: dims[2],
            context: dims[3],
            subsample: dims[4],
        };
        config
            .validate()
            .map_err(|e| Error::Corrupt(format!("checkpoint header: {e}")))?;
        let step = r.u64()?;
        let mut model = TinyTransducer::zeros(config)?;
        let needed: usize = model.params.tensors().iter().map(|m| m.as_slice().len()).sum();
        if needed.saturating_mul(8) > r.remaining() {
            return Err(Error::Corrupt(format!(
                "parameter block truncated: {} bytes for {needed} values",
                r.remaining()
            )));
        }
        for m in model.params.tensors_mut() {
            for x in m.as_mut_slice() {
                *x = r.f64()?;
            }
        }
        r.finish()?;
        Ok(Self { model, step })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomically(path, |w| w.write_all(&self.to_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&crate::io::read_file(path)?)
    }
}
