//! Synthetic multi-view world.
//!
//! Every location has a latent `z ~ N(0, I)`. The satellite view is
//! `A_sat·z + c + σ·noise` and a query view of modality `v` is
//! `(A_sat + U_v·C_v)·z + c + σ·noise`, where `U_v·C_v` is a low-rank
//! modality-specific distortion and `c` is an offset shared by all views.
//! The offset makes untrained embeddings nearly collinear. Each modality
//! owns disjoint train and test location sets.

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::seed::{rng_for, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("bad world spec: {0}")]
    BadSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    /// Locations per modality and split.
    pub n_locations: usize,
    pub latent_dim: usize,
    pub input_dim: usize,
    pub noise_sigma: f64,
    /// Query modalities; the first one is the base modality.
    pub modalities: Vec<String>,
    /// Rank of each modality's distortion.
    pub distortion_rank: usize,
    /// Norm of the shared offset relative to the expected signal norm.
    pub offset_scale: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            n_locations: 500,
            latent_dim: 16,
            input_dim: 32,
            noise_sigma: 0.05,
            modalities: vec!["panorama".into(), "uav".into(), "street-map".into()],
            distortion_rank: 4,
            offset_scale: 12.0,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::BadSpec(m));
        if self.n_locations < 2 {
            return bad(format!("n_locations must be at least 2, got {}", self.n_locations));
        }
        if self.latent_dim == 0 || self.input_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.modalities.is_empty() {
            return bad("at least one query modality is required".into());
        }
        let mut names = self.modalities.clone();
        names.sort();
        names.dedup();
        if names.len() != self.modalities.len() {
            return bad("modality names must be unique".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be finite and non-negative, got {}", self.noise_sigma));
        }
        if !(self.offset_scale.is_finite() && self.offset_scale >= 0.0) {
            return bad(format!("offset_scale must be finite and non-negative, got {}", self.offset_scale));
        }
        Ok(())
    }
}

/// One split of one modality: row `i` of `queries` and of `refs` show the
/// same location.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPairs {
    pub latents: Matrix,
    pub queries: Matrix,
    pub refs: Matrix,
}

impl ViewPairs {
    pub fn len(&self) -> usize {
        self.queries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Modality {
    pub name: String,
    /// `A_sat + U_v·C_v`, input_dim × latent_dim.
    pub mixing: Matrix,
    pub train: ViewPairs,
    pub test: ViewPairs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub spec: WorldSpec,
    pub sat_mixing: Matrix,
    pub offset: Vec<f64>,
    pub modalities: Vec<Modality>,
}

impl SyntheticWorld {
    pub fn base(&self) -> &Modality {
        &self.modalities[0]
    }

    pub fn modality(&self, name: &str) -> Option<&Modality> {
        self.modalities.iter().find(|m| m.name == name)
    }
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut impl rand::Rng) -> Matrix {
    let d = Normal::new(0.0, std).expect("finite std");
    Matrix::new(rows, cols, (0..rows * cols).map(|_| d.sample(rng)).collect()).expect("shape")
}

/// `latents · mixingᵀ + offset + σ·noise`, row per location.
fn render(latents: &Matrix, mixing: &Matrix, offset: &[f64], sigma: f64, rng: &mut impl rand::Rng) -> Matrix {
    let mut x = latents.matmul_transposed(mixing);
    for i in 0..x.rows() {
        for (v, c) in x.row_mut(i).iter_mut().zip(offset) {
            let e: f64 = StandardNormal.sample(rng);
            *v += c + sigma * e;
        }
    }
    x
}

pub fn generate_world(spec: &WorldSpec) -> Result<SyntheticWorld, WorldError> {
    spec.validate()?;
    let (l, k, d) = (spec.n_locations, spec.latent_dim, spec.input_dim);
    let seed = spec.seed;

    // entries scaled so that each coordinate of A·z has unit variance
    let mut rng = rng_for(seed, Stream::World, 0);
    let sat_mixing = gaussian(d, k, 1.0 / (k as f64).sqrt(), &mut rng);
    let direction: Vec<f64> = gaussian(1, d, 1.0, &mut rng).into_vec();
    let dn = crate::matrix::norm(&direction);
    let target = spec.offset_scale * (d as f64).sqrt();
    let offset: Vec<f64> = direction.iter().map(|x| x * target / dn).collect();

    let r = spec.distortion_rank;
    let modalities = spec
        .modalities
        .iter()
        .enumerate()
        .map(|(v, name)| {
            let stream = 1 + 4 * v as u32;
            let mut rng = rng_for(seed, Stream::World, stream);
            let mixing = if r == 0 {
                sat_mixing.clone()
            } else {
                let u = gaussian(d, r, 1.0 / (r as f64).sqrt(), &mut rng);
                let c = gaussian(r, k, 1.0 / (k as f64).sqrt(), &mut rng);
                sat_mixing.add(&u.matmul(&c))
            };
            let split = |idx: u32| {
                let mut rng = rng_for(seed, Stream::World, stream + idx);
                let latents = gaussian(l, k, 1.0, &mut rng);
                let queries = render(&latents, &mixing, &offset, spec.noise_sigma, &mut rng);
                let refs = render(&latents, &sat_mixing, &offset, spec.noise_sigma, &mut rng);
                ViewPairs { latents, queries, refs }
            };
            let train = split(1);
            let test = split(2);
            Modality { name: name.clone(), mixing, train, test }
        })
        .collect();
    Ok(SyntheticWorld { spec: spec.clone(), sat_mixing, offset, modalities })
}
