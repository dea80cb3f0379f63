//! Bit-exact model persistence.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! bytes 0..4    magic  "FSTC"
//! bytes 4..8    format version, u32 = 1
//! bytes 8..12   metadata length in bytes, u32
//! ...           metadata: UTF-8 JSON (model config, parameter names and
//!               shapes in order, corpus fingerprint, creating command,
//!               seed)
//! ...           payload: every parameter tensor's values as IEEE-754
//!               binary64, row-major, in the declared parameter order
//! ```
//!
//! Saving then loading reproduces every parameter bit-for-bit; the
//! fingerprint lets downstream commands refuse checkpoints produced
//! against a different corpus or vocabulary.

use std::fs;
use std::path::Path;

use fstc_core::model::{Model, ModelConfig};
use fstc_core::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, IoContext, Result};

pub const MAGIC: [u8; 4] = *b"FSTC";
pub const VERSION: u32 = 1;

/// Architecture and regularizer settings, mirrored into JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfigMeta {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub noise_std: f64,
}

impl From<&ModelConfig> for ModelConfigMeta {
    fn from(c: &ModelConfig) -> Self {
        ModelConfigMeta {
            input_dim: c.input_dim,
            hidden_dims: c.hidden_dims.clone(),
            num_classes: c.num_classes,
            weight_decay: c.weight_decay,
            label_smoothing: c.label_smoothing,
            noise_std: c.noise_std,
        }
    }
}

impl ModelConfigMeta {
    pub fn to_config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.input_dim,
            hidden_dims: self.hidden_dims.clone(),
            num_classes: self.num_classes,
            weight_decay: self.weight_decay,
            label_smoothing: self.label_smoothing,
            noise_std: self.noise_std,
        }
    }
}

/// One parameter's name and shape, fixing the payload layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Everything about a checkpoint except the parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfigMeta,
    pub params: Vec<ParamShape>,
    pub corpus_fingerprint: String,
    pub command: String,
    pub seed: u64,
}

/// Serializes a model to the checkpoint byte format.
pub fn to_bytes(model: &Model, fingerprint: &str, command: &str, seed: u64) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        model: ModelConfigMeta::from(&model.config),
        params: model
            .params
            .iter()
            .map(|(name, t)| ParamShape { name: name.to_string(), rows: t.rows(), cols: t.cols() })
            .collect(),
        corpus_fingerprint: fingerprint.to_string(),
        command: command.to_string(),
        seed,
    };
    let meta_json = serde_json::to_vec(&meta)
        .map_err(|e| CliError::Checkpoint(format!("encoding metadata: {e}")))?;
    let meta_len = u32::try_from(meta_json.len())
        .map_err(|_| CliError::Checkpoint("metadata exceeds u32 length".into()))?;

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(&meta_json);
    for (_, tensor) in model.params.iter() {
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses checkpoint bytes back into a model and its metadata.
pub fn from_bytes(bytes: &[u8]) -> Result<(Model, CheckpointMeta)> {
    let header = |what: &str| CliError::Checkpoint(format!("truncated file ({what})"));
    if bytes.len() < 12 {
        return Err(header("header"));
    }
    if bytes[0..4] != MAGIC {
        return Err(CliError::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CliError::Checkpoint(format!(
            "unsupported version {version} (this build reads version {VERSION})"
        )));
    }
    let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let meta_end = 12usize.checked_add(meta_len).ok_or_else(|| header("metadata"))?;
    if bytes.len() < meta_end {
        return Err(header("metadata"));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[12..meta_end])
        .map_err(|e| CliError::Checkpoint(format!("decoding metadata: {e}")))?;

    let scalar_count: usize = meta.params.iter().map(|p| p.rows * p.cols).sum();
    let payload = &bytes[meta_end..];
    if payload.len() != scalar_count * 8 {
        return Err(CliError::Checkpoint(format!(
            "payload holds {} bytes, metadata declares {}",
            payload.len(),
            scalar_count * 8
        )));
    }
    let mut params = ParamSet::new();
    let mut cursor = 0usize;
    for p in &meta.params {
        let n = p.rows * p.cols;
        let data: Vec<f64> = payload[cursor..cursor + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cursor += n * 8;
        params.insert(p.name.clone(), Tensor::new(p.rows, p.cols, data)?)?;
    }
    let model = Model::with_params(meta.model.to_config(), params)
        .map_err(|e| CliError::Checkpoint(format!("inconsistent metadata: {e}")))?;
    Ok((model, meta))
}

/// Writes a checkpoint file.
pub fn save(path: &Path, model: &Model, fingerprint: &str, command: &str, seed: u64) -> Result<()> {
    let bytes = to_bytes(model, fingerprint, command, seed)?;
    fs::write(path, bytes).checkpoint_context("writing", path)
}

/// Reads a checkpoint file.
pub fn load(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let bytes = fs::read(path).checkpoint_context("reading", path)?;
    from_bytes(&bytes).map_err(|e| match e {
        CliError::Checkpoint(msg) => CliError::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Loads a checkpoint and rejects it unless its corpus fingerprint matches
/// the one the current configuration produces.
pub fn load_matching(path: &Path, expected_fingerprint: &str) -> Result<(Model, CheckpointMeta)> {
    let (model, meta) = load(path)?;
    if meta.corpus_fingerprint != expected_fingerprint {
        return Err(CliError::Checkpoint(format!(
            "{}: corpus fingerprint {} does not match current data {}",
            path.display(),
            meta.corpus_fingerprint,
            expected_fingerprint
        )));
    }
    Ok((model, meta))
}
