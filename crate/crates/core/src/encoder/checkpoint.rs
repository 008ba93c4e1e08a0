//! Checkpoint serialization: `CTCDID01` magic, a JSON header describing the
//! vocabulary, feature configuration and layer shapes, then the parameters
//! as little-endian f32 blocks in visit order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{Vocabulary, BLANK_TOKEN, SPACE_TOKEN};

use super::features::FeatureConfig;
use super::net::{Arch, EncoderParams, NetTensors};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTCDID01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("corrupt header: {0}")]
    BadHeader(String),
    #[error("parameter block holds {got} floats, header promises {expected}")]
    WrongParamCount { got: usize, expected: usize },
}

/// A trained model: parameters plus everything needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub vocab: Vocabulary,
    pub feature: FeatureConfig,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tokens: Vec<String>,
    space_index: Option<usize>,
    feature: FeatureConfig,
    arch: Arch,
    input_shift: f64,
    input_scale: f64,
    param_count: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            tokens: self.vocab.tokens().to_vec(),
            space_index: self.vocab.space_index(),
            feature: self.feature.clone(),
            arch: self.params.arch.clone(),
            input_shift: self.params.input_shift,
            input_scale: self.params.input_scale,
            param_count: self.params.param_count(),
        };
        let header_json = serde_json::to_vec(&header).expect("header serializes");

        let mut out = Vec::with_capacity(8 + 4 + header_json.len() + 4 * header.param_count);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        self.params.tensors.visit(|block| {
            for &v in block {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        });
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body_start = 12 + header_len;
        if bytes.len() < body_start {
            return Err(CheckpointError::BadHeader("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[12..body_start])
            .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;

        if header.tokens.first().map(String::as_str) != Some(BLANK_TOKEN) {
            return Err(CheckpointError::BadHeader(format!(
                "first token must be {BLANK_TOKEN:?}"
            )));
        }
        let with_space = match header.space_index {
            None => false,
            Some(1) if header.tokens.get(1).map(String::as_str) == Some(SPACE_TOKEN) => true,
            Some(i) => {
                return Err(CheckpointError::BadHeader(format!(
                    "space token must sit at index 1, header says {i}"
                )))
            }
        };
        let first_dialect = 1 + usize::from(with_space);
        let vocab = Vocabulary::from_dialects(&header.tokens[first_dialect..], with_space)
            .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
        if vocab.size() != header.arch.n_out {
            return Err(CheckpointError::BadHeader(format!(
                "vocabulary size {} != output dim {}",
                vocab.size(),
                header.arch.n_out
            )));
        }
        if header.feature.n_bands != header.arch.n_bands {
            return Err(CheckpointError::BadHeader(
                "feature band count disagrees with the architecture".into(),
            ));
        }

        let body = &bytes[body_start..];
        if body.len() != 4 * header.param_count {
            return Err(CheckpointError::WrongParamCount {
                got: body.len() / 4,
                expected: header.param_count,
            });
        }

        let mut tensors = NetTensors::zeros(&header.arch);
        if tensors.param_count() != header.param_count {
            return Err(CheckpointError::WrongParamCount {
                got: header.param_count,
                expected: tensors.param_count(),
            });
        }
        let mut cursor = 0usize;
        tensors.visit_mut(|block| {
            for v in block.iter_mut() {
                let raw = &body[cursor * 4..cursor * 4 + 4];
                *v = f32::from_le_bytes(raw.try_into().unwrap()) as f64;
                cursor += 1;
            }
        });

        Ok(Checkpoint {
            params: EncoderParams {
                arch: header.arch,
                input_shift: header.input_shift,
                input_scale: header.input_scale,
                tensors,
            },
            vocab,
            feature: header.feature,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
