//! Exact cosine top-k.
//!
//! Ties are broken by ascending gallery index, which makes the ranking a
//! total order and the output independent of how query rows are scheduled.

use std::borrow::Cow;
use std::cmp::Ordering;

use rayon::prelude::*;

use super::{EmbeddingSet, StoreError};
use crate::matrix::dot;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub index: usize,
    pub score: f64,
}

/// Per-query ranked gallery rows, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKResult {
    pub gallery_size: usize,
    pub k: usize,
    pub rankings: Vec<Vec<Hit>>,
}

impl TopKResult {
    pub fn num_queries(&self) -> usize {
        self.rankings.len()
    }

    /// Ranked gallery indices for one query.
    pub fn indices(&self, query: usize) -> impl Iterator<Item = usize> + '_ {
        self.rankings[query].iter().map(|h| h.index)
    }

    /// Whether every query ranks the whole gallery.
    pub fn is_full(&self) -> bool {
        self.k == self.gallery_size
    }
}

#[inline]
fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.index.cmp(&b.index))
}

fn unit(set: &EmbeddingSet) -> Result<Cow<'_, EmbeddingSet>, StoreError> {
    if set.is_normalized() {
        Ok(Cow::Borrowed(set))
    } else {
        Ok(Cow::Owned(set.clone().normalize()?))
    }
}

/// Ranks `k` gallery rows per query by cosine similarity.
///
/// Sets that are not flagged normalized are normalized on the fly.
pub fn cosine_topk(queries: &EmbeddingSet, gallery: &EmbeddingSet, k: usize) -> Result<TopKResult, StoreError> {
    if queries.dim() != gallery.dim() {
        return Err(StoreError::DimMismatch { left: queries.dim(), right: gallery.dim() });
    }
    if k > gallery.len() {
        return Err(StoreError::KTooLarge { k, gallery: gallery.len() });
    }
    let q = unit(queries)?;
    let g = unit(gallery)?;
    let gm = g.matrix();

    let rankings = (0..q.len())
        .into_par_iter()
        .map(|qi| {
            let row = q.matrix().row(qi);
            let mut hits: Vec<Hit> =
                (0..gm.rows()).map(|index| Hit { index, score: dot(row, gm.row(index)) }).collect();
            if k == 0 {
                return Vec::new();
            }
            if k < hits.len() {
                hits.select_nth_unstable_by(k - 1, rank_order);
                hits.truncate(k);
            }
            hits.sort_unstable_by(rank_order);
            hits
        })
        .collect();

    Ok(TopKResult { gallery_size: gallery.len(), k, rankings })
}
