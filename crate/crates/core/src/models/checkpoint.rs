//! Model snapshots.
//!
//! On-disk layout, all integers little-endian:
//!
//! | bytes | field                                    |
//! |-------|------------------------------------------|
//! | 5     | magic `SSLV1`                            |
//! | 8     | step (u64)                               |
//! | 1     | fraction tag                             |
//! | 8     | parameter count (u64)                    |
//! | 4     | CRC32 of step, tag, count and payload    |
//! | 4·n   | parameters (f32)                         |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SSLV1";
const HEADER_LEN: usize = 5 + 8 + 1 + 8 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FractionTag {
    Third,
    TwoThirds,
    Final,
    Other,
}

impl FractionTag {
    pub fn to_byte(self) -> u8 {
        match self {
            Self::Third => 0,
            Self::TwoThirds => 1,
            Self::Final => 2,
            Self::Other => 3,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => Self::Third,
            1 => Self::TwoThirds,
            2 => Self::Final,
            3 => Self::Other,
            other => return Err(Error::Integrity(format!("unknown checkpoint tag byte {other}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub fraction_tag: FractionTag,
    pub parameters: Vec<f32>,
    /// Training rng state at the snapshot; kept in memory, not written to disk.
    pub rng_state: Vec<u8>,
}

/// Anything with a flat parameter store.
pub trait Parameterized {
    fn param_store(&self) -> &ParamStore;
}

impl Parameterized for crate::models::ClipClassifier {
    fn param_store(&self) -> &ParamStore {
        self.params()
    }
}

impl Parameterized for crate::models::SegmentationNet {
    fn param_store(&self) -> &ParamStore {
        self.params()
    }
}

pub fn save_checkpoint(model: &impl Parameterized, step: u64, tag: FractionTag) -> Checkpoint {
    Checkpoint {
        step,
        fraction_tag: tag,
        parameters: model.param_store().values().iter().map(|&v| v as f32).collect(),
        rng_state: Vec::new(),
    }
}

/// Restores a clip classifier of the given architecture.
pub fn load_checkpoint(spec: &crate::models::ClipModelSpec, ckpt: &Checkpoint) -> Result<crate::models::ClipClassifier> {
    crate::models::ClipClassifier::with_parameters(spec, &ckpt.parameters_f64())
}

pub fn load_seg_checkpoint(spec: &crate::models::SegModelSpec, ckpt: &Checkpoint) -> Result<crate::models::SegmentationNet> {
    crate::models::SegmentationNet::with_parameters(spec, &ckpt.parameters_f64())
}

fn crc(step: u64, tag: u8, count: u64, payload: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&step.to_le_bytes());
    h.update(&[tag]);
    h.update(&count.to_le_bytes());
    h.update(payload);
    h.finalize()
}

impl Checkpoint {
    pub fn parameters_f64(&self) -> Vec<f64> {
        self.parameters.iter().map(|&v| v as f64).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: Vec<u8> = self.parameters.iter().flat_map(|v| v.to_le_bytes()).collect();
        let count = self.parameters.len() as u64;
        let tag = self.fraction_tag.to_byte();
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.push(tag);
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&crc(self.step, tag, count, &payload).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(Error::Integrity("missing SSLV1 checkpoint header".into()));
        }
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let step = u64_at(5);
        let tag = bytes[13];
        let count = u64_at(14);
        let stored_crc = u32::from_le_bytes(bytes[22..26].try_into().unwrap());
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u64 != count.saturating_mul(4) {
            return Err(Error::Integrity(format!(
                "payload holds {} bytes, header declares {count} parameters",
                payload.len()
            )));
        }
        let actual = crc(step, tag, count, payload);
        if actual != stored_crc {
            return Err(Error::Integrity(format!(
                "checksum mismatch: stored {stored_crc:08x}, computed {actual:08x}"
            )));
        }
        Ok(Self {
            step,
            fraction_tag: FractionTag::from_byte(tag)?,
            parameters: payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            rng_state: Vec::new(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
