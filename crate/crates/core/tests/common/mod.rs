//! Independent reference implementations shared by the integration tests
//! and the acceptance runner. Nothing here calls into the library's
//! numerical or metric code.

#![allow(dead_code)]

use cvgl::embed_store::{Hit, TopKResult};
use cvgl::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rows drawn uniformly from [-1, 1], kept away from the origin.
pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        loop {
            let row: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            if row.iter().map(|v| v * v).sum::<f64>() > 0.05 {
                data.extend(row);
                break;
            }
        }
    }
    Matrix::new(rows, cols, data).unwrap()
}

fn unit(row: &[f64]) -> Vec<f64> {
    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    row.iter().map(|v| v / n).collect()
}

/// Cross-entropy of one logit row against a smoothed one-hot target.
fn row_ce(logits: &[f64], target: usize, eps: f64) -> f64 {
    let n = logits.len();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    let mut loss = 0.0;
    for (j, z) in logits.iter().enumerate() {
        let t = if n == 1 {
            1.0
        } else if j == target {
            1.0 - eps
        } else {
            eps / (n - 1) as f64
        };
        loss -= t * (z - lse);
    }
    loss
}

/// Symmetric InfoNCE written out with plain loops.
pub fn scalar_infonce(f1: &Matrix, f2: &Matrix, alpha: f64, eps: f64) -> f64 {
    let b = f1.rows();
    let u1: Vec<Vec<f64>> = (0..b).map(|i| unit(f1.row(i))).collect();
    let u2: Vec<Vec<f64>> = (0..b).map(|i| unit(f2.row(i))).collect();
    let mut z = vec![vec![0.0; b]; b];
    for i in 0..b {
        for j in 0..b {
            z[i][j] = alpha * u1[i].iter().zip(&u2[j]).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (i, row) in z.iter().enumerate() {
        l1 += row_ce(row, i, eps);
        let col: Vec<f64> = (0..b).map(|j| z[j][i]).collect();
        l2 += row_ce(&col, i, eps);
    }
    0.5 * (l1 + l2) / b as f64
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let v = x.get(i, j);
            probe.set(i, j, v + h);
            let up = f(&probe);
            probe.set(i, j, v - h);
            let down = f(&probe);
            probe.set(i, j, v);
            grad.set(i, j, (up - down) / (2.0 * h));
        }
    }
    grad
}

/// `max |a - b| / max(1, max |b|)`.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let scale = numeric.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    analytic.max_abs_diff(numeric) / scale
}

/// A random retrieval instance: full rankings plus positive and covering sets.
pub struct MetricCase {
    pub gallery: usize,
    pub rankings: Vec<Vec<usize>>,
    pub positives: Vec<Vec<usize>>,
    pub covering: Vec<Vec<usize>>,
}

impl MetricCase {
    pub fn random(rng: &mut impl Rng) -> Self {
        let gallery = rng.random_range(1..=200);
        let queries = rng.random_range(1..=30);
        let mut rankings = Vec::new();
        let mut positives = Vec::new();
        let mut covering = Vec::new();
        for _ in 0..queries {
            let mut order: Vec<usize> = (0..gallery).collect();
            order.shuffle(rng);
            rankings.push(order);
            let n_pos = rng.random_range(1..=gallery.min(4));
            let mut pool: Vec<usize> = (0..gallery).collect();
            pool.shuffle(rng);
            positives.push(pool[..n_pos].to_vec());
            let extra = rng.random_range(0..=(gallery - n_pos).min(3));
            covering.push(pool[n_pos..n_pos + extra].to_vec());
        }
        Self { gallery, rankings, positives, covering }
    }

    pub fn topk(&self) -> TopKResult {
        let rankings = self
            .rankings
            .iter()
            .map(|r| r.iter().enumerate().map(|(rank, &index)| Hit { index, score: -(rank as f64) }).collect())
            .collect();
        TopKResult { gallery_size: self.gallery, k: self.gallery, rankings }
    }

    fn rank_of(&self, q: usize, item: usize) -> usize {
        self.rankings[q].iter().position(|&g| g == item).unwrap() + 1
    }

    /// Queries whose best positive sits at rank ≤ k, over all queries.
    pub fn recall(&self, k: usize) -> f64 {
        let hits = (0..self.rankings.len())
            .filter(|&q| self.positives[q].iter().map(|&p| self.rank_of(q, p)).min().unwrap() <= k)
            .count();
        hits as f64 / self.rankings.len() as f64
    }

    /// `k` for the top `percent` of the gallery, by integer arithmetic on
    /// hundredths of a percent.
    pub fn top_percent_k(&self, percent_hundredths: u64) -> usize {
        let num = percent_hundredths * self.gallery as u64;
        (num.div_ceil(10_000) as usize).max(1)
    }

    pub fn hit_rate(&self) -> f64 {
        let hits = (0..self.rankings.len())
            .filter(|&q| {
                let top = self.rankings[q][0];
                self.positives[q].contains(&top) || self.covering[q].contains(&top)
            })
            .count();
        hits as f64 / self.rankings.len() as f64
    }

    pub fn mean_ap(&self) -> f64 {
        let mut total = 0.0;
        for q in 0..self.rankings.len() {
            let mut ranks: Vec<usize> = self.positives[q].iter().map(|&p| self.rank_of(q, p)).collect();
            ranks.sort_unstable();
            let mut ap = 0.0;
            for &r in &ranks {
                let above = ranks.iter().filter(|&&o| o <= r).count();
                ap += above as f64 / r as f64;
            }
            total += ap / ranks.len() as f64;
        }
        total / self.rankings.len() as f64
    }
}
