//! Dynamic Similarity Sampling: per-epoch hard-negative batch planning.
//!
//! Each class is represented by one reference embedding. Once per epoch the
//! neighbour table is rebuilt from the current embeddings and a plan is drawn
//! greedily:
//!
//! 1. shuffle the pool of unassigned classes with the seeded generator;
//! 2. pop an anchor;
//! 3. draw up to `neighbour_select` classes uniformly without replacement from
//!    the anchor's neighbour list, restricted to classes still unassigned;
//! 4. top the batch up to `batch_size` with classes drawn uniformly from the
//!    remaining pool;
//! 5. repeat until the pool is empty.
//!
//! Every class lands in exactly one batch per epoch. Before any embeddings
//! exist, [`plan_uniform`] gives plain random batches.

use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed_store::{cosine_topk, EmbeddingSet, StoreError};
use crate::jsonl::{self, JsonlError};

#[derive(Debug, Error)]
pub enum DssError {
    #[error("invalid DSS config: {0}")]
    InvalidConfig(String),
    #[error("neighbour table is empty")]
    EmptyTable,
    #[error("plan does not cover the class universe: {0}")]
    Coverage(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DssConfig {
    pub batch_size: usize,
    pub neighbour_select: usize,
    pub neighbour_range: usize,
    pub seed: u64,
}

impl Default for DssConfig {
    fn default() -> Self {
        Self { batch_size: 300, neighbour_select: 64, neighbour_range: 128, seed: 0 }
    }
}

impl DssConfig {
    pub fn validate(&self) -> Result<(), DssError> {
        if self.batch_size == 0 {
            return Err(DssError::InvalidConfig("batch_size must be positive".into()));
        }
        if self.neighbour_select > self.neighbour_range {
            return Err(DssError::InvalidConfig(format!(
                "neighbour_select {} exceeds neighbour_range {}",
                self.neighbour_select, self.neighbour_range
            )));
        }
        if self.neighbour_select >= self.batch_size {
            return Err(DssError::InvalidConfig(format!(
                "neighbour_select {} must be smaller than batch_size {}",
                self.neighbour_select, self.batch_size
            )));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Per class, its most similar other classes, best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    neighbors: Vec<Vec<usize>>,
}

impl NeighborTable {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, class: usize) -> &[usize] {
        &self.neighbors[class]
    }
}

/// Exact top-`neighbour_range` cosine neighbours of every class, self
/// excluded, ties by ascending class index.
pub fn build_neighbor_table(refs: &EmbeddingSet, cfg: &DssConfig) -> Result<NeighborTable, DssError> {
    cfg.validate()?;
    let n = refs.len();
    let depth = (cfg.neighbour_range + 1).min(n);
    let top = cosine_topk(refs, refs, depth)?;
    let keep = cfg.neighbour_range.min(n.saturating_sub(1));
    let neighbors = top
        .rankings
        .iter()
        .enumerate()
        .map(|(class, hits)| hits.iter().map(|h| h.index).filter(|&i| i != class).take(keep).collect())
        .collect();
    Ok(NeighborTable { neighbors })
}

/// An epoch's batches of class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    batches: Vec<Vec<usize>>,
}

impl BatchPlan {
    pub fn new(batches: Vec<Vec<usize>>) -> Self {
        Self { batches }
    }

    pub fn batches(&self) -> &[Vec<usize>] {
        &self.batches
    }

    pub fn into_batches(self) -> Vec<Vec<usize>> {
        self.batches
    }

    pub fn num_classes(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    /// Checks that classes `0..n` each appear exactly once and that only the
    /// last batch may be short.
    pub fn check_coverage(&self, n: usize, batch_size: usize) -> Result<(), DssError> {
        let mut seen = vec![false; n];
        for (b, batch) in self.batches.iter().enumerate() {
            if b + 1 < self.batches.len() && batch.len() != batch_size {
                return Err(DssError::Coverage(format!("batch {b} has {} classes", batch.len())));
            }
            for &c in batch {
                if c >= n {
                    return Err(DssError::Coverage(format!("class {c} outside 0..{n}")));
                }
                if std::mem::replace(&mut seen[c], true) {
                    return Err(DssError::Coverage(format!("class {c} appears twice")));
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(c) => Err(DssError::Coverage(format!("class {c} is missing"))),
            None => Ok(()),
        }
    }

    /// For every batch, how many non-anchor members are in the anchor's
    /// (first member's) neighbour list.
    pub fn hard_neighbor_counts(&self, table: &NeighborTable) -> Vec<usize> {
        self.batches
            .iter()
            .map(|batch| match batch.split_first() {
                Some((&anchor, rest)) => rest.iter().filter(|c| table.neighbors(anchor).contains(c)).count(),
                None => 0,
            })
            .collect()
    }

    /// One JSON array of class ids per line.
    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<(), DssError> {
        Ok(jsonl::write_jsonl_to(&self.batches, w)?)
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, DssError> {
        Ok(Self { batches: jsonl::parse_lines(r.lines())? })
    }
}

/// Unassigned-class pool with O(1) removal of arbitrary members.
struct Pool {
    items: Vec<usize>,
    slot: Vec<usize>,
}

impl Pool {
    const GONE: usize = usize::MAX;

    fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut items: Vec<usize> = (0..n).collect();
        items.shuffle(rng);
        let mut slot = vec![0; n];
        for (i, &c) in items.iter().enumerate() {
            slot[c] = i;
        }
        Self { items, slot }
    }

    fn contains(&self, c: usize) -> bool {
        self.slot[c] != Self::GONE
    }

    fn remove(&mut self, c: usize) {
        let i = self.slot[c];
        debug_assert_ne!(i, Self::GONE);
        self.items.swap_remove(i);
        if let Some(&moved) = self.items.get(i) {
            self.slot[moved] = i;
        }
        self.slot[c] = Self::GONE;
    }

    fn pop(&mut self) -> Option<usize> {
        let c = self.items.pop()?;
        self.slot[c] = Self::GONE;
        Some(c)
    }

    fn len(&self) -> usize {
        self.items.len()
    }
}

/// Greedy anchor-fill plan over the classes of `table`. Deterministic in
/// `(table, cfg)`.
pub fn plan_epoch(table: &NeighborTable, cfg: &DssConfig) -> Result<BatchPlan, DssError> {
    cfg.validate()?;
    let n = table.len();
    if n == 0 {
        return Err(DssError::EmptyTable);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pool = Pool::shuffled(n, &mut rng);
    let mut batches = Vec::with_capacity(n.div_ceil(cfg.batch_size));

    while let Some(anchor) = pool.pop() {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        batch.push(anchor);

        let candidates: Vec<usize> = table.neighbors(anchor).iter().copied().filter(|&c| pool.contains(c)).collect();
        let take = cfg.neighbour_select.min(candidates.len()).min(cfg.batch_size - 1);
        for i in index::sample(&mut rng, candidates.len(), take) {
            let c = candidates[i];
            pool.remove(c);
            batch.push(c);
        }
        debug_assert!(batch.len() > cfg.neighbour_select.min(candidates.len()).min(cfg.batch_size - 1));

        while batch.len() < cfg.batch_size && pool.len() > 0 {
            let c = pool.items[rng.random_range(0..pool.len())];
            pool.remove(c);
            batch.push(c);
        }
        batches.push(batch);
    }
    Ok(BatchPlan { batches })
}

/// Random batches without similarity information.
pub fn plan_uniform(n_classes: usize, cfg: &DssConfig) -> Result<BatchPlan, DssError> {
    cfg.validate()?;
    if n_classes == 0 {
        return Err(DssError::EmptyTable);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.shuffle(&mut rng);
    Ok(BatchPlan { batches: order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect() })
}

/// Permutes the order of whole batches; batch contents are untouched.
pub fn shuffle_plan(plan: BatchPlan, seed: u64) -> BatchPlan {
    let mut batches = plan.batches;
    batches.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    BatchPlan { batches }
}
