//! Weight files: a little-endian `f32` blob plus a JSON sidecar naming every tensor.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::Parameters;
use crate::nn::model::{build_model, TransformerConfig, TransformerModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub config: TransformerConfig,
    pub dtype: String,
    pub total_bytes: usize,
    pub tensors: Vec<TensorEntry>,
}

/// Sidecar path for a blob: `model.bin` → `model.json`.
pub fn sidecar_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

pub fn encode_weights(model: &TransformerModel) -> (Vec<u8>, WeightsManifest) {
    let mut blob = Vec::with_capacity(model.param_count() * 4);
    let mut tensors = Vec::new();
    for (name, m) in model.named_params() {
        tensors.push(TensorEntry {
            name,
            shape: [m.rows(), m.cols()],
            offset: blob.len(),
        });
        for v in m.as_slice() {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let manifest = WeightsManifest {
        config: model.config,
        dtype: "f32-le".into(),
        total_bytes: blob.len(),
        tensors,
    };
    (blob, manifest)
}

pub fn decode_weights(blob: &[u8], manifest: &WeightsManifest) -> Result<TransformerModel> {
    if manifest.dtype != "f32-le" {
        return Err(Error::validation(format!("unsupported weight dtype '{}'", manifest.dtype)));
    }
    if blob.len() != manifest.total_bytes {
        return Err(Error::validation(format!(
            "weight blob holds {} bytes, manifest declares {}",
            blob.len(),
            manifest.total_bytes
        )));
    }
    let mut model = build_model(manifest.config, 0)?;
    let expected: Vec<(String, [usize; 2])> = model
        .named_params()
        .into_iter()
        .map(|(n, m)| (n, [m.rows(), m.cols()]))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::validation(format!(
            "manifest lists {} tensors, configuration needs {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let needed: usize = expected.iter().map(|(_, s)| s[0] * s[1] * 4).sum();
    if needed != blob.len() {
        return Err(Error::validation(format!(
            "configuration needs {needed} weight bytes, blob holds {}",
            blob.len()
        )));
    }
    for ((entry, (name, shape)), param) in manifest
        .tensors
        .iter()
        .zip(&expected)
        .zip(model.params_mut())
    {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::validation(format!(
                "tensor '{}' {:?} does not match expected '{}' {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
        let bytes = blob
            .get(entry.offset..entry.offset + param.len() * 4)
            .ok_or_else(|| Error::validation(format!("tensor '{}' runs past the blob", entry.name)))?;
        for (dst, chunk) in param.as_mut_slice().iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
        }
    }
    if !model.is_finite() {
        return Err(Error::validation("weight file contains non-finite values"));
    }
    Ok(model)
}

/// Writes `path` (blob) and its `.json` sidecar.
pub fn save_weights(model: &TransformerModel, path: &Path) -> Result<()> {
    let (blob, manifest) = encode_weights(model);
    fs::write(path, &blob).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<TransformerModel> {
    let blob = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let manifest: WeightsManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: side.clone(),
        message: e.to_string(),
    })?;
    decode_weights(&blob, &manifest)
}
