//! Self-describing JSON checkpoints. Weights are stored as base64 of
//! little-endian `f64`, so a save/load round trip is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, ParamStore};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub step: u64,
    pub train_seed: u64,
    pub best_val_auc: Option<f64>,
    /// Free-form training settings recorded for provenance.
    #[serde(default)]
    pub settings: serde_json::Value,
}

/// Adam moment estimates and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSnapshot {
    pub t: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
    pub optimizer: Option<OptimizerSnapshot>,
}

#[derive(Serialize, Deserialize)]
struct StoredArray {
    name: String,
    shape: [usize; 2],
    data: String,
}

#[derive(Serialize, Deserialize)]
struct StoredOptimizer {
    t: u64,
    m: Vec<StoredArray>,
    v: Vec<StoredArray>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredCheckpoint {
    format_version: u32,
    model_config: ModelConfig,
    weights: Vec<StoredArray>,
    metadata: CheckpointMeta,
    optimizer: Option<StoredOptimizer>,
}

fn store(params: &ParamStore) -> Vec<StoredArray> {
    params
        .iter()
        .map(|(name, a)| {
            let bytes: Vec<u8> = a.iter().flat_map(|v| v.to_le_bytes()).collect();
            StoredArray {
                name: name.clone(),
                shape: [a.nrows(), a.ncols()],
                data: STANDARD.encode(bytes),
            }
        })
        .collect()
}

fn restore(arrays: Vec<StoredArray>) -> Result<ParamStore, ModelError> {
    let mut params = ParamStore::new();
    for a in arrays {
        let bytes = STANDARD
            .decode(a.data.as_bytes())
            .map_err(|e| ModelError::Checkpoint(format!("weight {}: {e}", a.name)))?;
        if bytes.len() != a.shape[0] * a.shape[1] * 8 {
            return Err(ModelError::Checkpoint(format!(
                "weight {} holds {} bytes, shape {:?} needs {}",
                a.name,
                bytes.len(),
                a.shape,
                a.shape[0] * a.shape[1] * 8
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(a.name, Array2::from_shape_vec((a.shape[0], a.shape[1]), values).unwrap());
    }
    Ok(params)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), ModelError> {
    let stored = StoredCheckpoint {
        format_version: FORMAT_VERSION,
        model_config: *ckpt.model.config(),
        weights: store(ckpt.model.params()),
        metadata: ckpt.meta.clone(),
        optimizer: ckpt.optimizer.as_ref().map(|o| StoredOptimizer {
            t: o.t,
            m: store(&o.m),
            v: store(&o.v),
        }),
    };
    let text = serde_json::to_string(&stored).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| ModelError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let stored: StoredCheckpoint =
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    if stored.format_version != FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "format version {} not supported (expected {FORMAT_VERSION})",
            stored.format_version
        )));
    }
    let model = Model::from_parts(stored.model_config, restore(stored.weights)?)?;
    let optimizer = match stored.optimizer {
        Some(o) => {
            let m = restore(o.m)?;
            let v = restore(o.v)?;
            for (name, p) in model.params().iter() {
                let ok = |s: &ParamStore| s.get(name).is_some_and(|a| a.dim() == p.dim());
                if !ok(&m) || !ok(&v) {
                    return Err(ModelError::Checkpoint(format!("optimizer state for {name} missing or misshapen")));
                }
            }
            Some(OptimizerSnapshot { t: o.t, m, v })
        }
        None => None,
    };
    Ok(Checkpoint {
        model,
        meta: stored.metadata,
        optimizer,
    })
}
