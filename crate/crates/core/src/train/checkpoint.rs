//! Binary checkpoint: `"FMAE"`, a little-endian `u32` version, a `u64`
//! header length, a JSON header and the concatenated little-endian `f64`
//! parameter values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FmAe, Init, ModelConfig};

pub const MAGIC: &[u8; 4] = b"FMAE";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrained,
    Detector,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Pretrained => "pretrained",
            Stage::Detector => "detector",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub byte_length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub stage: Stage,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub stage: Stage,
    pub model: FmAe,
}

impl Checkpoint {
    pub fn new(stage: Stage, model: FmAe) -> Self {
        Checkpoint { stage, model }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let mut payload = Vec::with_capacity(self.model.params().num_values() * 8);
        let tensors = self
            .model
            .params()
            .iter()
            .map(|p| {
                for v in p.tensor.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                let byte_length = 8 * p.tensor.len() as u64;
                let e = TensorEntry {
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                    offset,
                    byte_length,
                };
                offset += byte_length;
                e
            })
            .collect();
        let header = Header {
            stage: self.stage,
            config: self.model.config().clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    /// Parses and validates a checkpoint. `origin` names the source in errors.
    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let err = |msg: String| Error::Format {
            path: origin.to_string(),
            msg,
        };
        if bytes.len() < 16 {
            return Err(err(format!("file is {} bytes, too short for a checkpoint", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(err(format!("bad magic {:?}, expected \"FMAE\"", String::from_utf8_lossy(&bytes[..4]))));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(err(format!("unsupported version {version}, expected {VERSION}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|l| l.checked_add(16))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| err(format!("header length {header_len} exceeds file size")))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| err(format!("invalid header: {e}")))?;
        header.config.validate().map_err(|e| err(format!("invalid model config: {e}")))?;
        let payload = &bytes[header_end..];

        let mut model = FmAe::new(header.config.clone(), Init::Zeros)?;
        if header.tensors.len() != model.params().len() {
            return Err(err(format!(
                "header lists {} tensors, config implies {}",
                header.tensors.len(),
                model.params().len()
            )));
        }
        let mut expected_offset = 0u64;
        let mut seen = std::collections::HashSet::new();
        for e in &header.tensors {
            if !seen.insert(e.name.as_str()) {
                return Err(err(format!("parameter {} listed twice", e.name)));
            }
            let id = model
                .params()
                .id(&e.name)
                .ok_or_else(|| err(format!("unknown parameter {}", e.name)))?;
            let shape = model.params().get(id).tensor.shape().to_vec();
            if shape != e.shape {
                return Err(err(format!(
                    "parameter {}: shape {:?} does not match config shape {:?}",
                    e.name, e.shape, shape
                )));
            }
            let n: usize = shape.iter().product();
            if e.byte_length != 8 * n as u64 || e.offset != expected_offset {
                return Err(err(format!(
                    "parameter {}: bad table entry (offset {}, length {})",
                    e.name, e.offset, e.byte_length
                )));
            }
            expected_offset += e.byte_length;
        }
        if payload.len() as u64 != expected_offset {
            return Err(err(format!(
                "payload length {} does not match the {} bytes listed in the header",
                payload.len(),
                expected_offset
            )));
        }
        for e in &header.tensors {
            let id = model.params().id(&e.name).expect("checked");
            let start = e.offset as usize;
            let raw = &payload[start..start + e.byte_length as usize];
            let dst = model.params_mut().get_mut(id).tensor.data_mut();
            for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
                *d = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        Ok(Checkpoint {
            stage: header.stage,
            model,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, &path.display().to_string())
}
