//! Contrastive cross-view geo-localization toolkit.
//!
//! Modules, bottom-up:
//!
//! - [`numerics`]: row normalization, smoothed cross-entropy and the
//!   symmetric InfoNCE loss with analytic gradients.
//! - [`embed_store`]: `.emb` persistence and exact cosine top-k.
//! - [`retrieval`]: Recall@k, Recall@top-p%, Hit Rate and mAP.
//! - [`dss`]: similarity-driven hard-negative batch planning.
//! - [`dist`]: a rank-by-rank simulation of the all-gather InfoNCE loss.
//! - [`mixer`]: per-dataset sampling ratios, merging and pos/neg pair expansion.
//! - [`trainer`]: a synthetic multi-view world and a shared linear encoder
//!   trained with the pieces above.
//! - [`xbench`]: scoring of match-with-explanation model outputs.

pub mod dist;
pub mod dss;
pub mod embed_store;
pub mod jsonl;
pub mod matrix;
pub mod mixer;
pub mod numerics;
pub mod retrieval;
pub mod seed;
pub mod trainer;
pub mod xbench;

pub use matrix::Matrix;
