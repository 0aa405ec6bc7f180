//! Retrieval metrics over ranked galleries with explicit positive and
//! covering sets.
//!
//! A query's *positives* are its canonical matches. Its *covering* set adds
//! semi-positives (gallery items that partially cover the query location) and
//! always contains the positives. Recall and AP use positives; Hit Rate uses
//! the covering set.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed_store::TopKResult;
use crate::jsonl::{self, JsonlError};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("ranking depth {depth} is smaller than the required {required}")]
    DepthTooSmall { depth: usize, required: usize },
    #[error("{rankings} ranked queries but {truth} ground-truth entries")]
    QueryCountMismatch { rankings: usize, truth: usize },
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("percent must lie in (0, 100], got {0}")]
    InvalidPercent(f64),
    #[error("query {0:?} has no positives")]
    EmptyPositives(String),
    #[error("query {0:?} appears twice in the ground truth")]
    DuplicateQuery(String),
    #[error("query {query:?}: positive {id:?} is missing from its covering set")]
    PositiveNotCovered { query: String, id: String },
    #[error("query {0:?} has no ground-truth entry")]
    MissingQuery(String),
    #[error("query {query:?} references unknown gallery id {id:?}")]
    UnknownGalleryId { query: String, id: String },
    #[error("ground truth: {0}")]
    Load(#[from] JsonlError),
}

/// One ground-truth line: `{query_id, positives, covering}`.
///
/// An empty or absent `covering` means "same as positives".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTruth {
    pub query_id: String,
    pub positives: Vec<String>,
    #[serde(default)]
    pub covering: Vec<String>,
}

/// Ground truth keyed by query id.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    entries: HashMap<String, QueryTruth>,
}

impl GroundTruth {
    pub fn from_records(records: Vec<QueryTruth>) -> Result<Self, MetricError> {
        let mut entries = HashMap::with_capacity(records.len());
        for mut rec in records {
            if rec.positives.is_empty() {
                return Err(MetricError::EmptyPositives(rec.query_id));
            }
            if rec.covering.is_empty() {
                rec.covering = rec.positives.clone();
            }
            if let Some(p) = rec.positives.iter().find(|p| !rec.covering.contains(p)) {
                return Err(MetricError::PositiveNotCovered { query: rec.query_id.clone(), id: p.clone() });
            }
            if entries.contains_key(&rec.query_id) {
                return Err(MetricError::DuplicateQuery(rec.query_id));
            }
            entries.insert(rec.query_id.clone(), rec);
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricError> {
        Self::from_records(jsonl::read_jsonl(path)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, query_id: &str) -> Option<&QueryTruth> {
        self.entries.get(query_id)
    }

    /// Maps ids to row indices for a concrete query list and gallery.
    pub fn resolve(&self, query_ids: &[String], gallery_ids: &[String]) -> Result<ResolvedTruth, MetricError> {
        let gallery: HashMap<&str, usize> = gallery_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let lookup = |query: &str, ids: &[String]| -> Result<Vec<usize>, MetricError> {
            let mut out = ids
                .iter()
                .map(|id| {
                    gallery.get(id.as_str()).copied().ok_or_else(|| MetricError::UnknownGalleryId {
                        query: query.to_string(),
                        id: id.clone(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            out.sort_unstable();
            out.dedup();
            Ok(out)
        };
        let mut positives = Vec::with_capacity(query_ids.len());
        let mut covering = Vec::with_capacity(query_ids.len());
        for q in query_ids {
            let entry = self.entries.get(q).ok_or_else(|| MetricError::MissingQuery(q.clone()))?;
            positives.push(lookup(q, &entry.positives)?);
            covering.push(lookup(q, &entry.covering)?);
        }
        Ok(ResolvedTruth { positives, covering })
    }
}

/// Ground truth as sorted gallery row indices, one entry per query row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedTruth {
    positives: Vec<Vec<usize>>,
    covering: Vec<Vec<usize>>,
}

impl ResolvedTruth {
    /// Builds directly from index sets; `covering` is widened to include the positives.
    pub fn from_indices(positives: Vec<Vec<usize>>, covering: Vec<Vec<usize>>) -> Result<Self, MetricError> {
        if positives.len() != covering.len() {
            return Err(MetricError::QueryCountMismatch { rankings: positives.len(), truth: covering.len() });
        }
        let mut pos_out = Vec::with_capacity(positives.len());
        let mut cov_out = Vec::with_capacity(positives.len());
        for (qi, (mut p, mut c)) in positives.into_iter().zip(covering).enumerate() {
            if p.is_empty() {
                return Err(MetricError::EmptyPositives(qi.to_string()));
            }
            c.extend_from_slice(&p);
            p.sort_unstable();
            p.dedup();
            c.sort_unstable();
            c.dedup();
            pos_out.push(p);
            cov_out.push(c);
        }
        Ok(Self { positives: pos_out, covering: cov_out })
    }

    pub fn num_queries(&self) -> usize {
        self.positives.len()
    }

    pub fn is_positive(&self, query: usize, gallery: usize) -> bool {
        self.positives[query].binary_search(&gallery).is_ok()
    }

    pub fn is_covering(&self, query: usize, gallery: usize) -> bool {
        self.covering[query].binary_search(&gallery).is_ok()
    }

    pub fn positives(&self, query: usize) -> &[usize] {
        &self.positives[query]
    }
}

fn check_inputs(rankings: &TopKResult, truth: &ResolvedTruth, required_depth: usize) -> Result<(), MetricError> {
    if rankings.num_queries() != truth.num_queries() {
        return Err(MetricError::QueryCountMismatch { rankings: rankings.num_queries(), truth: truth.num_queries() });
    }
    if rankings.num_queries() == 0 {
        return Err(MetricError::NoQueries);
    }
    let depth = rankings.rankings.iter().map(Vec::len).min().unwrap_or(0);
    if depth < required_depth {
        return Err(MetricError::DepthTooSmall { depth, required: required_depth });
    }
    Ok(())
}

/// Fraction of queries with at least one positive in their top `k`.
pub fn recall_at_k(rankings: &TopKResult, truth: &ResolvedTruth, k: usize) -> Result<f64, MetricError> {
    check_inputs(rankings, truth, k)?;
    let hits = rankings
        .rankings
        .iter()
        .enumerate()
        .filter(|(q, hits)| hits[..k].iter().any(|h| truth.is_positive(*q, h.index)))
        .count();
    Ok(hits as f64 / rankings.num_queries() as f64)
}

/// `k = ⌈percent/100 · gallery_size⌉`, at least 1.
pub fn top_percent_k(percent: f64, gallery_size: usize) -> Result<usize, MetricError> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(MetricError::InvalidPercent(percent));
    }
    // Multiply before dividing and absorb representation error so that exact
    // products such as 1% of 100 do not round up.
    let exact = percent * gallery_size as f64 / 100.0;
    let k = (exact - 1e-9).ceil().max(1.0) as usize;
    Ok(k.min(gallery_size.max(1)))
}

/// Recall within the top `percent`% of the gallery.
pub fn recall_at_top_percent(
    rankings: &TopKResult,
    truth: &ResolvedTruth,
    percent: f64,
    gallery_size: usize,
) -> Result<f64, MetricError> {
    recall_at_k(rankings, truth, top_percent_k(percent, gallery_size)?)
}

/// Fraction of queries whose rank-1 item lies in the covering set.
pub fn hit_rate(rankings: &TopKResult, truth: &ResolvedTruth) -> Result<f64, MetricError> {
    check_inputs(rankings, truth, 1)?;
    let hits = rankings.rankings.iter().enumerate().filter(|(q, hits)| truth.is_covering(*q, hits[0].index)).count();
    Ok(hits as f64 / rankings.num_queries() as f64)
}

/// Mean over queries of `(1/|P|) · Σ_{p ∈ P} precision@rank(p)` on full rankings.
pub fn mean_average_precision(rankings: &TopKResult, truth: &ResolvedTruth) -> Result<f64, MetricError> {
    check_inputs(rankings, truth, rankings.gallery_size)?;
    let mut total = 0.0;
    for (q, hits) in rankings.rankings.iter().enumerate() {
        let n_pos = truth.positives(q).len();
        let mut found = 0usize;
        let mut sum = 0.0;
        for (rank, h) in hits.iter().enumerate() {
            if truth.is_positive(q, h.index) {
                found += 1;
                sum += found as f64 / (rank + 1) as f64;
                if found == n_pos {
                    break;
                }
            }
        }
        total += sum / n_pos as f64;
    }
    Ok(total / rankings.num_queries() as f64)
}

/// The retrieval columns: R@k for each requested k, recall at the top
/// percentage of the gallery, Hit Rate and mAP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub queries: usize,
    pub gallery_size: usize,
    pub recall_at: BTreeMap<usize, f64>,
    pub top_percent: f64,
    pub top_percent_k: usize,
    pub recall_top_percent: f64,
    pub hit_rate: f64,
    pub mean_ap: f64,
}

/// Computes every metric from full-depth rankings.
pub fn evaluate(rankings: &TopKResult, truth: &ResolvedTruth, ks: &[usize], top_percent: f64) -> Result<MetricReport, MetricError> {
    let mut recall_at = BTreeMap::new();
    for &k in ks {
        recall_at.insert(k, recall_at_k(rankings, truth, k)?);
    }
    let k = top_percent_k(top_percent, rankings.gallery_size)?;
    Ok(MetricReport {
        queries: rankings.num_queries(),
        gallery_size: rankings.gallery_size,
        recall_at,
        top_percent,
        top_percent_k: k,
        recall_top_percent: recall_at_k(rankings, truth, k)?,
        hit_rate: hit_rate(rankings, truth)?,
        mean_ap: mean_average_precision(rankings, truth)?,
    })
}

impl MetricReport {
    /// One header row and one value row, percentages with two decimals.
    pub fn to_table(&self) -> String {
        let mut header = Vec::new();
        let mut values = Vec::new();
        for (k, v) in &self.recall_at {
            header.push(format!("R@{k}"));
            values.push(format!("{:.2}", v * 100.0));
        }
        header.push(format!("Top-{}%", self.top_percent));
        values.push(format!("{:.2}", self.recall_top_percent * 100.0));
        header.push("AP".into());
        values.push(format!("{:.2}", self.mean_ap * 100.0));
        header.push("HR".into());
        values.push(format!("{:.2}", self.hit_rate * 100.0));
        let widths: Vec<usize> = header.iter().zip(&values).map(|(h, v)| h.len().max(v.len())).collect();
        let line = |cells: &[String]| {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
        };
        format!(
            "queries: {}  gallery: {}  top-{}% k: {}\n{}\n{}\n",
            self.queries,
            self.gallery_size,
            self.top_percent,
            self.top_percent_k,
            line(&header),
            line(&values)
        )
    }
}
