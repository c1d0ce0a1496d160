//! Model files: raw little-endian `f64` parameters plus a JSON shape
//! manifest. Run manifests carry the config and a content hash.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ssl::config::{HeadKind, TrainConfig};
use crate::ssl::net::{Regressor, Shape};

pub const MODEL_FORMAT: &str = "f64-le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format: String,
    pub shape: Shape,
    pub head: HeadKind,
    pub n_params: usize,
    /// Layer order of the flat vector.
    pub layout: Vec<String>,
    pub sha256: String,
}

fn to_bytes(params: &[f64]) -> Vec<u8> {
    params.iter().flat_map(|p| p.to_le_bytes()).collect()
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn save_model(model: &Regressor, stem: &Path) -> Result<ModelManifest> {
    let bytes = to_bytes(model.params());
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        shape: model.shape(),
        head: model.head(),
        n_params: model.params().len(),
        layout: ["W1", "b1", "W2", "b2", "W3", "b3"].map(String::from).to_vec(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    };
    fs::write(stem.with_extension("bin"), &bytes)?;
    fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Accepts the `.bin` path, the `.json` path, or the bare stem.
pub fn load_model(path: &Path) -> Result<Regressor> {
    let manifest: ModelManifest = serde_json::from_str(&fs::read_to_string(path.with_extension("json"))?)?;
    if manifest.format != MODEL_FORMAT {
        return Err(Error::Config(format!("model format {:?}", manifest.format)));
    }
    let bytes = fs::read(path.with_extension("bin"))?;
    if bytes.len() != manifest.n_params * 8 {
        return Err(Error::Shape {
            expected: manifest.n_params * 8,
            got: bytes.len(),
        });
    }
    if hex::encode(Sha256::digest(&bytes)) != manifest.sha256 {
        return Err(Error::Config("model checksum mismatch".into()));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Regressor::from_params(manifest.shape, manifest.head, params)
}

/// Git-style object hash: `sha256("blob <len>\0" ++ content)`.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    /// Hash of the canonical config JSON, which fixes every input of the run
    /// (data is generated from the seed).
    pub input_hash: String,
    pub tau: f64,
    pub pretrain_steps_run: usize,
    pub model_sha256: String,
    pub metrics_sha256: String,
}

impl RunManifest {
    pub fn new(config: &TrainConfig, tau: f64, pretrain_steps_run: usize, model: &ModelManifest, metrics_csv: &str) -> Self {
        let canonical = serde_json::to_string(config).expect("config serializes");
        RunManifest {
            config: config.clone(),
            input_hash: content_hash(canonical.as_bytes()),
            tau,
            pretrain_steps_run,
            model_sha256: model.sha256.clone(),
            metrics_sha256: hex::encode(Sha256::digest(metrics_csv.as_bytes())),
        }
    }
}
