//! Versioned structured-text checkpoint format.
//!
//! Layout: one magic line (`LEAFCAST-CKPT-1`) followed by a JSON document
//! carrying the format version, model config, dataset manifest (feature
//! names, scaler, species classes) and the flat parameter tensors with
//! declared shapes. Values serialize through shortest-round-trip decimal
//! formatting, so save/load is bitwise exact.

use std::io::{Read, Write};

use thiserror::Error;

use crate::features::DatasetManifest;

use super::params::{tensor_names, DenseHeadParams, LstmLayerParams, Tensor};
use super::{LstmModel, ModelConfig};

pub const CHECKPOINT_MAGIC: &str = "LEAFCAST-CKPT-1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic string: expected `{CHECKPOINT_MAGIC}`")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}`: expected {expected_rows}x{expected_cols}, found {found_rows}x{found_cols}")]
    ShapeMismatch {
        name: String,
        expected_rows: usize,
        expected_cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("tensor `{name}`: {len} values do not fill {rows}x{cols}")]
    LengthMismatch { name: String, rows: usize, cols: usize, len: usize },
    #[error("invalid config in checkpoint: {0}")]
    Config(String),
    #[error("manifest inconsistent with config: {0}")]
    Manifest(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(serde::Serialize, serde::Deserialize)]
struct NamedTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointBody {
    format_version: u32,
    config: ModelConfig,
    #[serde(flatten)]
    manifest: DatasetManifest,
    tensors: Vec<NamedTensor>,
}

/// Serializes the model and its dataset manifest.
pub fn save_checkpoint(
    model: &LstmModel,
    manifest: &DatasetManifest,
    mut writer: impl Write,
) -> Result<(), CheckpointError> {
    let names = tensor_names(model.layers.len());
    let tensors = names
        .into_iter()
        .zip(model.tensors())
        .map(|(name, t)| NamedTensor { name, rows: t.rows, cols: t.cols, data: t.data.clone() })
        .collect();
    let body = CheckpointBody {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        manifest: manifest.clone(),
        tensors,
    };
    writeln!(writer, "{CHECKPOINT_MAGIC}")?;
    serde_json::to_writer_pretty(&mut writer, &body)?;
    writer.flush()?;
    Ok(())
}

/// Inverse of [`save_checkpoint`], validating magic, version, config and
/// tensor shapes.
pub fn load_checkpoint(
    mut reader: impl Read,
) -> Result<(LstmModel, DatasetManifest), CheckpointError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let Some((first_line, body_text)) = text.split_once('\n') else {
        return Err(CheckpointError::BadMagic);
    };
    if first_line.trim_end_matches('\r') != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let body: CheckpointBody = serde_json::from_str(body_text)?;
    if body.format_version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(body.format_version));
    }
    body.config
        .validate()
        .map_err(|e| CheckpointError::Config(e.to_string()))?;
    if body.manifest.feature_names.len() != body.config.feature_count {
        return Err(CheckpointError::Manifest(format!(
            "{} feature names vs feature_count {}",
            body.manifest.feature_names.len(),
            body.config.feature_count
        )));
    }
    if body.manifest.window_size != body.config.window_size {
        return Err(CheckpointError::Manifest(format!(
            "manifest window {} vs config window {}",
            body.manifest.window_size, body.config.window_size
        )));
    }

    let mut by_name: std::collections::BTreeMap<String, NamedTensor> =
        body.tensors.into_iter().map(|t| (t.name.clone(), t)).collect();

    let mut take = |name: &str, rows: usize, cols: usize| -> Result<Tensor, CheckpointError> {
        let t = by_name
            .remove(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
        if t.rows != rows || t.cols != cols {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected_rows: rows,
                expected_cols: cols,
                found_rows: t.rows,
                found_cols: t.cols,
            });
        }
        if t.data.len() != rows * cols {
            return Err(CheckpointError::LengthMismatch {
                name: name.to_string(),
                rows,
                cols,
                len: t.data.len(),
            });
        }
        Ok(Tensor { rows: t.rows, cols: t.cols, data: t.data })
    };

    let mut layers = Vec::with_capacity(body.config.layers.len());
    let mut inputs = body.config.feature_count;
    for (l, spec) in body.config.layers.iter().enumerate() {
        let units = spec.units;
        let mut layer = LstmLayerParams::zeros(units, inputs);
        for (g, gate) in super::params::GATE_NAMES.iter().enumerate() {
            layer.w[g] = take(&format!("layer{l}.w.{gate}"), units, inputs)?;
        }
        for (g, gate) in super::params::GATE_NAMES.iter().enumerate() {
            layer.u[g] = take(&format!("layer{l}.u.{gate}"), units, units)?;
        }
        for (g, gate) in super::params::GATE_NAMES.iter().enumerate() {
            layer.b[g] = take(&format!("layer{l}.b.{gate}"), units, 1)?;
        }
        layers.push(layer);
        inputs = units;
    }
    let head = DenseHeadParams {
        weights: take("head.w", 1, inputs)?,
        bias: take("head.b", 1, 1)?,
    };

    Ok((LstmModel::from_parts(body.config, layers, head), body.manifest))
}
