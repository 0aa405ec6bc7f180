//! Embedding sets with stable string ids, their `.emb` persistence and exact
//! cosine top-k search.

mod format;
mod search;
pub mod sidecar;

use std::collections::HashMap;

use thiserror::Error;

use crate::matrix::{norm, Matrix};
use crate::numerics::{l2_normalize_rows, NumericsError};

pub use format::{decode_embeddings, encode_embeddings, read_embeddings, write_embeddings, FORMAT_VERSION, MAGIC};
pub use search::{cosine_topk, Hit, TopKResult};

/// Tolerance on row norms for sets flagged as normalized.
pub const NORMALIZED_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic bytes {0:?}, expected \"GLEM\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated while reading {0}")]
    TruncatedFile(&'static str),
    #[error("{0} trailing bytes after the value block")]
    TrailingBytes(usize),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("id block entry {0} is not valid UTF-8")]
    InvalidUtf8(usize),
    #[error("{ids} ids for {rows} rows")]
    RowCountMismatch { ids: usize, rows: usize },
    #[error("row {row} has norm {norm} but the set is flagged normalized")]
    NotNormalized { row: usize, norm: f64 },
    #[error("row {row} holds a non-finite value")]
    NonFinite { row: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("k = {k} exceeds gallery size {gallery}")]
    KTooLarge { k: usize, gallery: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An `N × d` matrix whose rows are addressed by unique string ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    matrix: Matrix,
    normalized: bool,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, matrix: Matrix) -> Result<Self, StoreError> {
        if ids.len() != matrix.rows() {
            return Err(StoreError::RowCountMismatch { ids: ids.len(), rows: matrix.rows() });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(StoreError::DuplicateId(id.clone()));
            }
        }
        Ok(Self { ids, matrix, normalized: false, index })
    }

    /// Like [`EmbeddingSet::new`] but marks the set normalized after
    /// checking every row norm.
    pub fn new_normalized(ids: Vec<String>, matrix: Matrix) -> Result<Self, StoreError> {
        let mut set = Self::new(ids, matrix)?;
        set.check_unit_rows()?;
        set.normalized = true;
        Ok(set)
    }

    /// Returns the set with every row scaled to unit norm.
    pub fn normalize(self) -> Result<Self, StoreError> {
        if self.normalized {
            return Ok(self);
        }
        let matrix = l2_normalize_rows(&self.matrix)?;
        Ok(Self { matrix, normalized: true, ..self })
    }

    fn check_unit_rows(&self) -> Result<(), StoreError> {
        for (row, r) in self.matrix.iter_rows().enumerate() {
            let n = norm(r);
            if (n - 1.0).abs() > NORMALIZED_TOLERANCE {
                return Err(StoreError::NotNormalized { row, norm: n });
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.matrix.row(i))
    }
}
