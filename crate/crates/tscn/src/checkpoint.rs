//! Model checkpoint files: one line of JSON header, a newline, then the
//! parameters as raw little-endian f64 in the header's layout order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tscn_core::basemodel::{Modality, ModelConfig, StreamModel};

use crate::error::{AppError, Result};

const FORMAT: &str = "tscn-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub modality: Modality,
    /// Initialization seed of the stream.
    pub seed: u64,
    pub iteration: usize,
    /// 0-based epoch within the iteration.
    pub epoch: usize,
    /// Epoch-mean total training loss of the saved epoch.
    pub mean_total_loss: f64,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub conv_layers: usize,
    pub kernel_size: usize,
    /// `(name, length)` of every parameter group, in file order.
    pub layout: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub header: CheckpointHeader,
    pub model: StreamModel,
}

pub fn header_for(model: &StreamModel, seed: u64, iteration: usize, epoch: usize, mean_total_loss: f64) -> CheckpointHeader {
    CheckpointHeader {
        format: FORMAT.into(),
        modality: model.modality,
        seed,
        iteration,
        epoch,
        mean_total_loss,
        input_dim: model.input_dim(),
        embed_dim: model.embed_dim(),
        num_classes: model.num_classes(),
        conv_layers: model.convs.len(),
        kernel_size: model.kernel_size(),
        layout: model.param_layout(),
    }
}

pub fn to_bytes(header: &CheckpointHeader, model: &StreamModel) -> Result<Vec<u8>> {
    if header.layout != model.param_layout() {
        return Err(AppError::Data("checkpoint header layout does not match the model".into()));
    }
    let mut out = serde_json::to_vec(header).map_err(|e| AppError::Data(format!("checkpoint header: {e}")))?;
    out.push(b'\n');
    for v in model.params_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<SavedModel> {
    let bad = |msg: String| AppError::Data(format!("checkpoint: {msg}"));
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..split]).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != FORMAT {
        return Err(bad(format!("unsupported format {:?}", header.format)));
    }
    let config = ModelConfig {
        conv_layers: header.conv_layers,
        kernel_size: header.kernel_size,
        embed_dim: Some(header.embed_dim),
    };
    let mut model = StreamModel::init(&config, header.input_dim, header.num_classes, header.modality, header.seed)
        .map_err(|e| bad(e.to_string()))?;
    if model.param_layout() != header.layout {
        return Err(bad("layout disagrees with the declared shapes".into()));
    }
    let block = &bytes[split + 1..];
    if block.len() != model.num_params() * 8 {
        return Err(bad(format!(
            "parameter block holds {} bytes, expected {}",
            block.len(),
            model.num_params() * 8
        )));
    }
    let values: Vec<f64> = block
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    model.set_params_flat(&values)?;
    Ok(SavedModel { header, model })
}

pub fn save(path: &Path, header: &CheckpointHeader, model: &StreamModel) -> Result<()> {
    let bytes = to_bytes(header, model)?;
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> Result<SavedModel> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    from_bytes(&bytes).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

/// File name of a stream checkpoint inside a run's checkpoint directory.
pub fn file_name(iteration: usize, modality: Modality) -> String {
    format!("iter{iteration}_{}.ckpt", modality.name())
}
