//! Rank-by-rank simulation of the all-gather InfoNCE loss.
//!
//! Each of `W` ranks holds a contiguous `B/W`-row block of both feature
//! matrices. A rank normalizes its block, all-gathers every rank's normalized
//! block and concatenates them with its own block first and the others in
//! ascending rank order. The same permutation is applied to both matrices, so
//! the diagonal labels `y = [0, 1, …, B-1]` still pair matching rows and the
//! loss on every rank equals the single-process loss.
//!
//! Gathered remote blocks carry no gradient. A rank therefore only
//! produces gradients for its own rows; stacking those blocks in rank order
//! reproduces the full-batch gradient. Real DDP additionally averages
//! parameter gradients over ranks; that factor (`1/W`) is reported in
//! [`DdpOutcome::param_grad_average_factor`] and never applied here.
//!
//! # Communication model
//!
//! [`comm_volume`] counts feature bytes moved per training step for both
//! feature matrices, with `s = ⌈B/W⌉` rows per shard and `w` bytes per value:
//!
//! - `Ddp`, per rank: a ring all-gather sends and receives `(W-1)` shards,
//!   `2 · (W-1) · s · d · w` over the two matrices.
//! - `Dp`, at the hub rank: it receives `(W-1)` output shards and sends the
//!   matching output gradients back, `2 · 2 · (W-1) · s · d · w`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::numerics::{
    infonce_unit, l2_normalize_rows, normalize_rows_backward, symmetric_infonce, LossConfig, NumericsError,
};

/// Bytes per transmitted feature value (`f32`).
pub const FEATURE_BYTES: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("batch of {batch} rows cannot be split evenly across {world} ranks")]
    IndivisibleBatch { batch: usize, world: usize },
    #[error("rank {rank} out of range for world size {world}")]
    RankOutOfRange { rank: usize, world: usize },
    #[error("world size must be at least 1")]
    EmptyWorld,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub world_size: usize,
    pub loss: LossConfig,
}

impl WorldConfig {
    pub fn new(world_size: usize, loss: LossConfig) -> Result<Self, DistError> {
        if world_size == 0 {
            return Err(DistError::EmptyWorld);
        }
        Ok(Self { world_size, loss })
    }
}

/// One rank's inputs: raw local blocks and the gathered normalized batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RankShard {
    pub rank: usize,
    pub local_f1: Matrix,
    pub local_f2: Matrix,
    pub gathered_f1: Matrix,
    pub gathered_f2: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankLoss {
    pub loss: f64,
    pub grad_local_f1: Matrix,
    pub grad_local_f2: Matrix,
    pub grad_logit_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpOutcome {
    pub per_rank_loss: Vec<f64>,
    pub grad_local_f1: Vec<Matrix>,
    pub grad_local_f2: Vec<Matrix>,
    /// Local-block gradients placed back at their global row positions.
    pub aggregated_grad_f1: Matrix,
    pub aggregated_grad_f2: Matrix,
    pub grad_logit_scale: f64,
    /// The `1/W` that real DDP applies when averaging parameter gradients.
    pub param_grad_average_factor: f64,
}

impl DdpOutcome {
    pub fn loss(&self) -> f64 {
        self.per_rank_loss[0]
    }

    pub fn max_rank_loss_spread(&self) -> f64 {
        let lo = self.per_rank_loss.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.per_rank_loss.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

/// Splits both matrices into `W` contiguous equal blocks in rank order.
pub fn shard(f1: &Matrix, f2: &Matrix, world: usize) -> Result<Vec<(Matrix, Matrix)>, DistError> {
    if f1.shape() != f2.shape() {
        return Err(NumericsError::ShapeMismatch { left: f1.shape(), right: f2.shape() }.into());
    }
    if world == 0 {
        return Err(DistError::EmptyWorld);
    }
    let batch = f1.rows();
    if !batch.is_multiple_of(world) {
        return Err(DistError::IndivisibleBatch { batch, world });
    }
    let per = batch / world;
    Ok((0..world)
        .map(|r| (f1.slice_rows(r * per, (r + 1) * per), f2.slice_rows(r * per, (r + 1) * per)))
        .collect())
}

/// Rank `r`'s view after all-gather: its own block first, then the other
/// ranks in ascending order, applied identically to both matrices.
pub fn gather_local_first(shards: &[(Matrix, Matrix)], rank: usize) -> Result<(Matrix, Matrix), DistError> {
    if rank >= shards.len() {
        return Err(DistError::RankOutOfRange { rank, world: shards.len() });
    }
    let order = std::iter::once(rank).chain((0..shards.len()).filter(|&w| w != rank));
    let (f1, f2): (Vec<&Matrix>, Vec<&Matrix>) = order.map(|w| (&shards[w].0, &shards[w].1)).unzip();
    Ok((Matrix::vstack(&f1), Matrix::vstack(&f2)))
}

/// Loss over the full gathered batch with gradients for the local rows only.
pub fn rank_loss(shard: &RankShard, cfg: &LossConfig) -> Result<RankLoss, DistError> {
    let local = shard.local_f1.rows();
    let unit = infonce_unit(&shard.gathered_f1, &shard.gathered_f2, cfg)?;
    let u1 = shard.gathered_f1.slice_rows(0, local);
    let u2 = shard.gathered_f2.slice_rows(0, local);
    Ok(RankLoss {
        loss: unit.loss,
        grad_local_f1: normalize_rows_backward(&shard.local_f1, &u1, &unit.grad_u1.slice_rows(0, local)),
        grad_local_f2: normalize_rows_backward(&shard.local_f2, &u2, &unit.grad_u2.slice_rows(0, local)),
        grad_logit_scale: unit.grad_logit_scale,
    })
}

/// Runs shard → normalize → gather → loss on every rank and reassembles the
/// local-block gradients in global row order.
pub fn simulate_ddp(f1: &Matrix, f2: &Matrix, cfg: &WorldConfig) -> Result<DdpOutcome, DistError> {
    cfg.loss.validate()?;
    let raw = shard(f1, f2, cfg.world_size)?;
    let normalized = raw
        .iter()
        .map(|(a, b)| Ok((l2_normalize_rows(a)?, l2_normalize_rows(b)?)))
        .collect::<Result<Vec<_>, NumericsError>>()
        .map_err(|e| match e {
            // report the global row, not the row inside the shard
            NumericsError::ZeroRow(_) => first_zero_row(f1, f2),
            other => other,
        })?;

    let per_rank: Vec<RankLoss> = (0..cfg.world_size)
        .into_par_iter()
        .map(|rank| {
            let (gathered_f1, gathered_f2) = gather_local_first(&normalized, rank)?;
            let shard = RankShard {
                rank,
                local_f1: raw[rank].0.clone(),
                local_f2: raw[rank].1.clone(),
                gathered_f1,
                gathered_f2,
            };
            rank_loss(&shard, &cfg.loss)
        })
        .collect::<Result<_, _>>()?;

    let g1: Vec<&Matrix> = per_rank.iter().map(|r| &r.grad_local_f1).collect();
    let g2: Vec<&Matrix> = per_rank.iter().map(|r| &r.grad_local_f2).collect();
    Ok(DdpOutcome {
        per_rank_loss: per_rank.iter().map(|r| r.loss).collect(),
        aggregated_grad_f1: Matrix::vstack(&g1),
        aggregated_grad_f2: Matrix::vstack(&g2),
        grad_logit_scale: per_rank[0].grad_logit_scale,
        param_grad_average_factor: 1.0 / cfg.world_size as f64,
        grad_local_f1: per_rank.iter().map(|r| r.grad_local_f1.clone()).collect(),
        grad_local_f2: per_rank.into_iter().map(|r| r.grad_local_f2).collect(),
    })
}

fn first_zero_row(f1: &Matrix, f2: &Matrix) -> NumericsError {
    match l2_normalize_rows(f1).and_then(|_| l2_normalize_rows(f2)) {
        Err(e) => e,
        Ok(_) => NumericsError::ZeroRow(0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CommMode {
    Dp,
    Ddp,
}

/// Feature bytes moved per step; see the module docs for the formulas.
pub fn comm_volume(batch: usize, dim: usize, world: usize, mode: CommMode) -> u64 {
    if world <= 1 {
        return 0;
    }
    let shard_rows = batch.div_ceil(world) as u64;
    let per_matrix = (world as u64 - 1) * shard_rows * dim as u64 * FEATURE_BYTES;
    match mode {
        CommMode::Ddp => 2 * per_matrix,
        CommMode::Dp => 2 * 2 * per_matrix,
    }
}

/// Standard-normal feature pairs for equivalence checks, drawn from the
/// loss-check stream of `seed`.
pub fn random_features(batch: usize, dim: usize, seed: u64) -> (Matrix, Matrix) {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = crate::seed::rng_for(seed, crate::seed::Stream::LossCheck, 0);
    let mut draw = || {
        let data = (0..batch * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Matrix::new(batch, dim, data).expect("shape")
    };
    let f1 = draw();
    (f1, draw())
}

/// One line of the equivalence report for a given world size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub world_size: usize,
    pub per_rank_loss: Vec<f64>,
    pub reference_loss: f64,
    pub max_loss_deviation: f64,
    pub max_grad_deviation: f64,
    pub param_grad_average_factor: f64,
    pub ddp_bytes_per_rank: u64,
    pub dp_bytes_at_hub: u64,
}

/// Compares [`simulate_ddp`] against the single-process loss for each world size.
pub fn equivalence_report(
    f1: &Matrix,
    f2: &Matrix,
    world_sizes: &[usize],
    loss: &LossConfig,
) -> Result<Vec<EquivalenceRow>, DistError> {
    let reference = symmetric_infonce(f1, f2, loss)?;
    world_sizes
        .iter()
        .map(|&w| {
            let out = simulate_ddp(f1, f2, &WorldConfig::new(w, *loss)?)?;
            let max_loss_deviation =
                out.per_rank_loss.iter().map(|l| (l - reference.loss).abs()).fold(0.0, f64::max);
            let max_grad_deviation = out
                .aggregated_grad_f1
                .max_abs_diff(&reference.grad_f1)
                .max(out.aggregated_grad_f2.max_abs_diff(&reference.grad_f2));
            Ok(EquivalenceRow {
                world_size: w,
                reference_loss: reference.loss,
                max_loss_deviation,
                max_grad_deviation,
                param_grad_average_factor: out.param_grad_average_factor,
                ddp_bytes_per_rank: comm_volume(f1.rows(), f1.cols(), w, CommMode::Ddp),
                dp_bytes_at_hub: comm_volume(f1.rows(), f1.cols(), w, CommMode::Dp),
                per_rank_loss: out.per_rank_loss,
            })
        })
        .collect()
}
