//! Shared linear encoder trained with the all-gather InfoNCE loss on
//! similarity-planned batches of a [`SyntheticWorld`].
//!
//! One step: encode the batch's query and satellite views with the same
//! weight, run [`simulate_ddp`] over `world_size` ranks, chain the feature
//! gradients into the weight (`∂L/∂W = G_qᵀ·X_q + G_sᵀ·X_s`) and apply a
//! momentum step under a warmup-then-cosine learning rate.

mod checkpoint;
mod world;

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{simulate_ddp, DistError, WorldConfig};
use crate::dss::{build_neighbor_table, plan_epoch, plan_uniform, shuffle_plan, DssConfig, DssError};
use crate::embed_store::{cosine_topk, EmbeddingSet, StoreError};
use crate::matrix::Matrix;
use crate::numerics::{l2_normalize_rows, LossConfig, NumericsError, DEFAULT_LABEL_SMOOTHING, DEFAULT_LOGIT_SCALE};
use crate::seed::{derive_seed, rng_for, Stream};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use world::{generate_world, Modality, SyntheticWorld, ViewPairs, WorldError, WorldSpec};

/// Upper bound for a trainable logit scale.
pub const MAX_LOGIT_SCALE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("input has {found} columns, encoder expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Dss(#[from] DssError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Total batch across all ranks.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub label_smoothing: f64,
    pub logit_scale: f64,
    pub train_logit_scale: bool,
    pub neighbour_select: usize,
    pub neighbour_range: usize,
    pub world_size: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 300,
            learning_rate: 1e-4,
            warmup_epochs: 1,
            momentum: 0.0,
            label_smoothing: DEFAULT_LABEL_SMOOTHING,
            logit_scale: DEFAULT_LOGIT_SCALE,
            train_logit_scale: false,
            neighbour_select: 64,
            neighbour_range: 128,
            world_size: 1,
            embed_dim: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings that train the default synthetic world in seconds.
    pub fn desk() -> Self {
        Self { epochs: 10, batch_size: 100, learning_rate: 0.01, momentum: 0.9, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.world_size == 0 || self.world_size > self.batch_size {
            return bad(format!("world_size must lie in 1..={}, got {}", self.batch_size, self.world_size));
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        LossConfig::new(self.logit_scale, self.label_smoothing)?;
        Ok(())
    }
}

/// Linear map `x ↦ W·x` shared by every view, plus the logit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub weight: Matrix,
    pub logit_scale: f64,
}

impl Encoder {
    /// Gaussian weights with variance `1/input_dim`.
    pub fn random(embed_dim: usize, input_dim: usize, logit_scale: f64, seed: u64) -> Self {
        let mut rng = rng_for(seed, Stream::EncoderInit, 0);
        let d = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("finite std");
        let data = (0..embed_dim * input_dim).map(|_| d.sample(&mut rng)).collect();
        Self { weight: Matrix::new(embed_dim, input_dim, data).expect("shape"), logit_scale }
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Unnormalized features, one row per input row.
    pub fn features(&self, x: &Matrix) -> Result<Matrix, TrainError> {
        if x.cols() != self.input_dim() {
            return Err(TrainError::DimMismatch { expected: self.input_dim(), found: x.cols() });
        }
        Ok(x.matmul_transposed(&self.weight))
    }
}

/// Unit-normalized embeddings of `x`, ids `prefix0, prefix1, …`.
pub fn encode(enc: &Encoder, x: &Matrix, prefix: &str) -> Result<EmbeddingSet, TrainError> {
    let unit = l2_normalize_rows(&enc.features(x)?)?;
    let ids = (0..x.rows()).map(|i| format!("{prefix}{i}")).collect();
    Ok(EmbeddingSet::new_normalized(ids, unit)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub grad_weight: Matrix,
    pub grad_logit_scale: f64,
}

/// Loss and weight gradient for aligned rows of `queries` and `refs`.
pub fn batch_gradient(
    enc: &Encoder,
    queries: &Matrix,
    refs: &Matrix,
    label_smoothing: f64,
    world_size: usize,
) -> Result<BatchGradient, TrainError> {
    let f1 = enc.features(queries)?;
    let f2 = enc.features(refs)?;
    let world = WorldConfig::new(world_size, LossConfig::new(enc.logit_scale, label_smoothing)?)?;
    let out = simulate_ddp(&f1, &f2, &world)?;
    let mut grad_weight = out.aggregated_grad_f1.transposed_matmul(queries);
    grad_weight.axpy(1.0, &out.aggregated_grad_f2.transposed_matmul(refs));
    Ok(BatchGradient { loss: out.loss(), grad_weight, grad_logit_scale: out.grad_logit_scale })
}

/// Linear warmup from 0 to `peak`, then half-cosine decay towards 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let t = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.peak * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Training pairs; class `i` is row `i` of both matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainCorpus {
    pub queries: Matrix,
    pub refs: Matrix,
}

impl TrainCorpus {
    pub fn from_pairs(parts: &[&ViewPairs]) -> Self {
        let q: Vec<&Matrix> = parts.iter().map(|p| &p.queries).collect();
        let r: Vec<&Matrix> = parts.iter().map(|p| &p.refs).collect();
        Self { queries: Matrix::vstack(&q), refs: Matrix::vstack(&r) }
    }

    pub fn len(&self) -> usize {
        self.queries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fraction of queries whose nearest reference is their own location.
pub fn recall_at_1(enc: &Encoder, pairs: &ViewPairs) -> Result<f64, TrainError> {
    let q = encode(enc, &pairs.queries, "q")?;
    let g = encode(enc, &pairs.refs, "g")?;
    let top = cosine_topk(&q, &g, 1)?;
    let hits = top.rankings.iter().enumerate().filter(|(i, h)| h[0].index == *i).count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Held-out R@1 per modality name.
pub fn evaluate_r1(enc: &Encoder, world: &SyntheticWorld) -> Result<BTreeMap<String, f64>, TrainError> {
    world.modalities.iter().map(|m| Ok((m.name.clone(), recall_at_1(enc, &m.test)?))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub phase: String,
    pub epoch: usize,
    pub mean_loss: f64,
    pub last_lr: f64,
    pub logit_scale: f64,
    pub r1: BTreeMap<String, f64>,
    pub mean_r1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseResult {
    pub encoder: Encoder,
    /// Loss of the first batch before any update.
    pub initial_loss: Option<f64>,
    pub epochs: Vec<EpochMetrics>,
}

impl PhaseResult {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Trains `enc` on `corpus` for `cfg.epochs`, evaluating on `world` after
/// every epoch. `phase` names the run and selects its random streams.
pub fn train_phase(
    enc: Encoder,
    corpus: &TrainCorpus,
    world: &SyntheticWorld,
    cfg: &TrainConfig,
    phase: &str,
) -> Result<PhaseResult, TrainError> {
    cfg.validate()?;
    let n = corpus.len();
    if n < 2 {
        return Err(TrainError::EmptyCorpus);
    }
    let batch = cfg.batch_size.min(n);
    let select = cfg.neighbour_select.min(batch - 1).min(n - 1);
    let dss = DssConfig {
        batch_size: batch,
        neighbour_select: select,
        neighbour_range: cfg.neighbour_range.min(n - 1).max(select),
        seed: 0,
    };
    let steps_per_epoch = n.div_ceil(batch);
    let schedule = LrSchedule {
        peak: cfg.learning_rate,
        warmup_steps: cfg.warmup_epochs * steps_per_epoch,
        total_steps: cfg.epochs * steps_per_epoch,
    };
    let stream_base = crate::seed::name_index(phase) & 0xffff_0000;

    let mut enc = enc;
    let mut velocity = Matrix::zeros(enc.embed_dim(), enc.input_dim());
    let mut scale_velocity = 0.0;
    let mut step = 0;
    let mut initial_loss = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let index = stream_base | epoch as u32;
        let plan_cfg = dss.with_seed(derive_seed(cfg.seed, Stream::EpochPlan, index));
        let plan = if epoch == 0 {
            plan_uniform(n, &plan_cfg)?
        } else {
            let refs = encode(&enc, &corpus.refs, "r")?;
            plan_epoch(&build_neighbor_table(&refs, &plan_cfg)?, &plan_cfg)?
        };
        let plan = shuffle_plan(plan, derive_seed(cfg.seed, Stream::EpochOrder, index));

        let mut losses = Vec::with_capacity(plan.batches().len());
        let mut lr = 0.0;
        for classes in plan.batches() {
            lr = schedule.at(step);
            step += 1;
            let usable = classes.len() / cfg.world_size * cfg.world_size;
            if usable < 2 {
                continue;
            }
            let classes = &classes[..usable];
            let g = batch_gradient(
                &enc,
                &corpus.queries.select_rows(classes),
                &corpus.refs.select_rows(classes),
                cfg.label_smoothing,
                cfg.world_size,
            )?;
            initial_loss.get_or_insert(g.loss);
            losses.push(g.loss);

            velocity = velocity.scale(cfg.momentum);
            velocity.axpy(1.0, &g.grad_weight);
            enc.weight.axpy(-lr, &velocity);
            if cfg.train_logit_scale {
                // gradient step on ln(scale)
                scale_velocity = cfg.momentum * scale_velocity + g.grad_logit_scale * enc.logit_scale;
                enc.logit_scale = (enc.logit_scale.ln() - lr * scale_velocity).exp().clamp(1.0, MAX_LOGIT_SCALE);
            }
        }
        if !enc.weight.is_finite() {
            return Err(TrainError::InvalidConfig(format!("weights diverged in epoch {epoch}; lower the learning rate")));
        }
        let r1 = evaluate_r1(&enc, world)?;
        epochs.push(EpochMetrics {
            phase: phase.to_string(),
            epoch,
            mean_loss: mean(losses),
            last_lr: lr,
            logit_scale: enc.logit_scale,
            mean_r1: mean(r1.values().copied()),
            r1,
        });
    }
    Ok(PhaseResult { encoder: enc, initial_loss, epochs })
}

/// Initial encoder shared by paired runs with the same config.
pub fn initial_encoder(world: &SyntheticWorld, cfg: &TrainConfig) -> Encoder {
    Encoder::random(cfg.embed_dim, world.spec.input_dim, cfg.logit_scale, cfg.seed)
}

pub fn base_corpus(world: &SyntheticWorld) -> TrainCorpus {
    TrainCorpus::from_pairs(&[&world.base().train])
}

pub fn merged_corpus(world: &SyntheticWorld) -> TrainCorpus {
    let parts: Vec<&ViewPairs> = world.modalities.iter().map(|m| &m.train).collect();
    TrainCorpus::from_pairs(&parts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseResult {
    pub phase1: PhaseResult,
    pub phase2: PhaseResult,
}

impl TwoPhaseResult {
    pub fn encoder(&self) -> &Encoder {
        &self.phase2.encoder
    }

    pub fn metrics(&self) -> impl Iterator<Item = &EpochMetrics> {
        self.phase1.epochs.iter().chain(&self.phase2.epochs)
    }
}

/// Phase 1 on the base modality, then phase 2 on all modalities starting
/// from the phase-1 weights with fresh optimizer state and schedule.
pub fn two_phase_train(world: &SyntheticWorld, phase1: &TrainConfig, phase2: &TrainConfig) -> Result<TwoPhaseResult, TrainError> {
    let p1 = train_phase(initial_encoder(world, phase1), &base_corpus(world), world, phase1, "phase1")?;
    let p2 = train_phase(p1.encoder.clone(), &merged_corpus(world), world, phase2, "phase2")?;
    Ok(TwoPhaseResult { phase1: p1, phase2: p2 })
}

/// Trains on all modalities from the initial encoder.
pub fn from_scratch_train(world: &SyntheticWorld, cfg: &TrainConfig) -> Result<PhaseResult, TrainError> {
    train_phase(initial_encoder(world, cfg), &merged_corpus(world), world, cfg, "scratch")
}
