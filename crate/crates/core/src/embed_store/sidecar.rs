//! Line-delimited JSON sidecar mapping embedding ids to their provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::jsonl::{read_jsonl, write_jsonl, JsonlError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarRecord {
    pub id: String,
    pub dataset: String,
    pub modality: String,
    pub class_id: String,
}

pub fn write_sidecar(records: &[SidecarRecord], path: impl AsRef<Path>) -> Result<(), JsonlError> {
    write_jsonl(records, path)
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Vec<SidecarRecord>, JsonlError> {
    read_jsonl(path)
}
