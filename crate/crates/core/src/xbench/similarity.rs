use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{FallbackEmbedder, Fixed, Language, ParsedPrediction, PredictionRecord, XbenchError};
use crate::embed_store::EmbeddingSet;
use crate::matrix::{dot, norm};

/// Lower edges of bins 1..=4; bin 0 also takes negative similarities.
pub const BIN_EDGES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

pub fn similarity_bin(s: f64) -> usize {
    BIN_EDGES.iter().filter(|&&e| s >= e).count()
}

/// Where explanation vectors come from.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum VectorSource {
    Fallback,
    /// Precomputed vectors keyed by sample id.
    Files { predictions: EmbeddingSet, references: EmbeddingSet },
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        (dot(a, b) / d).clamp(-1.0, 1.0)
    }
}

/// Cosine per record between its explanation and its reference; `None` for
/// unparseable responses. An empty explanation scores 0.
pub fn pair_similarities(
    records: &[PredictionRecord],
    parses: &[ParsedPrediction],
    references: &HashMap<String, String>,
    source: &VectorSource,
) -> Result<Vec<Option<f64>>, XbenchError> {
    if records.len() != parses.len() {
        return Err(XbenchError::LengthMismatch(records.len(), parses.len()));
    }
    records
        .par_iter()
        .zip(parses)
        .map(|(r, p)| {
            if !p.is_parsed() {
                return Ok(None);
            }
            let reference = references.get(&r.id).ok_or_else(|| XbenchError::MissingReference(r.id.clone()))?;
            if p.explanation.is_empty() {
                return Ok(Some(0.0));
            }
            let s = match source {
                VectorSource::Fallback => FallbackEmbedder.similarity(&p.explanation, reference),
                VectorSource::Files { predictions, references } => {
                    let a = predictions.vector(&r.id).ok_or_else(|| XbenchError::MissingVector(r.id.clone()))?;
                    let b = references.vector(&r.id).ok_or_else(|| XbenchError::MissingVector(r.id.clone()))?;
                    cosine(a, b)
                }
            };
            Ok(Some(s))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn get(&self) -> Option<Fixed> {
        (self.n > 0).then(|| Fixed::from_f64(self.sum / self.n as f64, 4))
    }
}

/// Similarity summary for one language.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub language: Language,
    pub scored: usize,
    pub unparseable: usize,
    pub bins: [usize; 5],
    all: Mean,
    pos: Mean,
    neg: Mean,
}

impl SimilarityReport {
    /// Share of scored samples in bin `i`, one decimal.
    pub fn bin_percent(&self, i: usize) -> Option<Fixed> {
        (self.scored > 0).then(|| Fixed::from_ratio(self.bins[i] as u64 * 100, self.scored as u64, 1))
    }

    pub fn avg(&self) -> Option<Fixed> {
        self.all.get()
    }

    pub fn pos(&self) -> Option<Fixed> {
        self.pos.get()
    }

    pub fn neg(&self) -> Option<Fixed> {
        self.neg.get()
    }

    pub fn pos_minus_neg(&self) -> Option<Fixed> {
        Some(self.pos()? - self.neg()?)
    }

    /// Unrounded mean similarity.
    pub fn raw_avg(&self) -> Option<f64> {
        (self.all.n > 0).then(|| self.all.sum / self.all.n as f64)
    }
}

/// One report per language present, in [`Language::ALL`] order.
pub fn explanation_similarity(records: &[PredictionRecord], sims: &[Option<f64>]) -> Result<Vec<SimilarityReport>, XbenchError> {
    if records.len() != sims.len() {
        return Err(XbenchError::LengthMismatch(records.len(), sims.len()));
    }
    let mut out = Vec::new();
    for language in Language::ALL {
        let mut rep = SimilarityReport {
            language,
            scored: 0,
            unparseable: 0,
            bins: [0; 5],
            all: Mean::default(),
            pos: Mean::default(),
            neg: Mean::default(),
        };
        let mut seen = false;
        for (r, s) in records.iter().zip(sims).filter(|(r, _)| r.language == language) {
            seen = true;
            let Some(s) = *s else {
                rep.unparseable += 1;
                continue;
            };
            rep.scored += 1;
            rep.bins[similarity_bin(s)] += 1;
            rep.all.push(s);
            if r.gt_label == 1 {
                rep.pos.push(s);
            } else {
                rep.neg.push(s);
            }
        }
        if seen {
            out.push(rep);
        }
    }
    Ok(out)
}
