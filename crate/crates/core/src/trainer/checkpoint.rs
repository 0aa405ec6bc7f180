//! Encoder checkpoints: the weight rows as a `.emb` file (ids `w0, w1, …`)
//! next to a JSON metadata file with the same stem.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Encoder, TrainError};
use crate::embed_store::{read_embeddings, write_embeddings, EmbeddingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub embed_dim: usize,
    pub input_dim: usize,
    pub logit_scale: f64,
    /// Free-form provenance, e.g. the phases that produced the weights.
    #[serde(default)]
    pub note: String,
}

fn meta_path(emb: &Path) -> PathBuf {
    emb.with_extension("json")
}

/// Writes `path` (`.emb`) and its `.json` sibling. Weights are stored at
/// 32-bit precision.
pub fn save_checkpoint(enc: &Encoder, path: &Path, note: &str) -> Result<(), TrainError> {
    let ids = (0..enc.embed_dim()).map(|i| format!("w{i}")).collect();
    write_embeddings(&EmbeddingSet::new(ids, enc.weight.clone())?, path)?;
    let meta = CheckpointMeta {
        embed_dim: enc.embed_dim(),
        input_dim: enc.input_dim(),
        logit_scale: enc.logit_scale,
        note: note.to_string(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    std::fs::write(meta_path(path), json + "\n").map_err(|e| TrainError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<(Encoder, CheckpointMeta), TrainError> {
    let set = read_embeddings(path)?;
    let text = std::fs::read_to_string(meta_path(path)).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    if set.len() != meta.embed_dim || set.dim() != meta.input_dim {
        return Err(TrainError::Checkpoint(format!(
            "weights are {}x{} but metadata says {}x{}",
            set.len(),
            set.dim(),
            meta.embed_dim,
            meta.input_dim
        )));
    }
    Ok((Encoder { weight: set.matrix().clone(), logit_scale: meta.logit_scale }, meta))
}
