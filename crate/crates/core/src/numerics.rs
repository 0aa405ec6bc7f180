//! Numerical kernels for the contrastive objective.
//!
//! Everything here is computed in `f64`. The symmetric InfoNCE loss takes raw
//! (unnormalized) features, normalizes them internally and returns gradients
//! with respect to the raw inputs, chaining through the normalization.
//!
//! Label smoothing puts `1 - ε` on the positive column and spreads `ε` evenly
//! over the remaining `n - 1` columns. For `n = 1` the target is the single
//! column regardless of `ε`.

use thiserror::Error;

use crate::matrix::{dot, norm, Matrix};

/// Rows with a norm below this are treated as zero.
pub const MIN_ROW_NORM: f64 = 1e-30;

/// `1 / 0.07`, the usual CLIP-style initial logit scale.
pub const DEFAULT_LOGIT_SCALE: f64 = 1.0 / 0.07;

pub const DEFAULT_LABEL_SMOOTHING: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("row {0} has (near) zero norm")]
    ZeroRow(usize),
    #[error("logits must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("non-finite logit at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("feature shapes differ: {left:?} vs {right:?}")]
    ShapeMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub logit_scale: f64,
    pub label_smoothing: f64,
}

impl LossConfig {
    pub fn new(logit_scale: f64, label_smoothing: f64) -> Result<Self, NumericsError> {
        let cfg = Self { logit_scale, label_smoothing };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(NumericsError::InvalidConfig(format!(
                "logit_scale must be positive, got {}",
                self.logit_scale
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(NumericsError::InvalidConfig(format!(
                "label_smoothing must lie in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { logit_scale: DEFAULT_LOGIT_SCALE, label_smoothing: DEFAULT_LABEL_SMOOTHING }
    }
}

/// Loss value and gradients with respect to the raw feature inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    pub grad_f1: Matrix,
    pub grad_f2: Matrix,
    /// `∂L/∂α`, used when the logit scale is trained.
    pub grad_logit_scale: f64,
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix, NumericsError> {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let n = norm(m.row(i));
        if n.is_nan() || n < MIN_ROW_NORM {
            return Err(NumericsError::ZeroRow(i));
        }
        for v in out.row_mut(i) {
            *v /= n;
        }
    }
    Ok(out)
}

/// Backpropagates a gradient through row normalization.
///
/// `unit` must be `l2_normalize_rows(raw)`. For each row,
/// `∂L/∂raw = (g - u (u·g)) / ‖raw‖`.
pub fn normalize_rows_backward(raw: &Matrix, unit: &Matrix, grad_unit: &Matrix) -> Matrix {
    debug_assert_eq!(raw.shape(), unit.shape());
    debug_assert_eq!(raw.shape(), grad_unit.shape());
    let mut out = Matrix::zeros(raw.rows(), raw.cols());
    for i in 0..raw.rows() {
        let u = unit.row(i);
        let g = grad_unit.row(i);
        let n = norm(raw.row(i));
        let proj = dot(u, g);
        for ((o, &gv), &uv) in out.row_mut(i).iter_mut().zip(g).zip(u) {
            *o = (gv - uv * proj) / n;
        }
    }
    out
}

/// Label-smoothed cross-entropy with diagonal targets.
///
/// Returns the mean loss over rows and `∂loss/∂logits`, which is
/// `(softmax(row) - target) / n`.
pub fn smoothed_cross_entropy(logits: &Matrix, epsilon: f64) -> Result<(f64, Matrix), NumericsError> {
    let (rows, cols) = logits.shape();
    if rows != cols {
        return Err(NumericsError::NonSquare { rows, cols });
    }
    if rows == 0 {
        return Err(NumericsError::EmptyBatch);
    }
    if let Some(pos) = logits.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite { row: pos / cols, col: pos % cols });
    }
    let n = rows;
    let (on, off) = if n == 1 { (1.0, 0.0) } else { (1.0 - epsilon, epsilon / (n - 1) as f64) };
    let inv_n = 1.0 / n as f64;

    let mut total = 0.0;
    let mut grad = Matrix::zeros(n, n);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let g = grad.row_mut(i);
        let mut row_loss = 0.0;
        for (j, (&z, gv)) in row.iter().zip(g.iter_mut()).enumerate() {
            let target = if i == j { on } else { off };
            let log_p = z - lse;
            if target > 0.0 {
                row_loss -= target * log_p;
            }
            *gv = (log_p.exp() - target) * inv_n;
        }
        total += row_loss;
    }
    Ok((total * inv_n, grad))
}

/// Loss and gradients with respect to already-normalized features.
#[derive(Debug, Clone)]
pub(crate) struct UnitLoss {
    pub loss: f64,
    pub grad_u1: Matrix,
    pub grad_u2: Matrix,
    pub grad_logit_scale: f64,
}

/// Symmetric InfoNCE over unit rows `u1`, `u2` with diagonal labels.
pub(crate) fn infonce_unit(u1: &Matrix, u2: &Matrix, cfg: &LossConfig) -> Result<UnitLoss, NumericsError> {
    let alpha = cfg.logit_scale;
    let sim = u1.matmul_transposed(u2);
    let z1 = sim.scale(alpha);
    let z2 = z1.transpose();
    let (l1, g1) = smoothed_cross_entropy(&z1, cfg.label_smoothing)?;
    let (l2, g2) = smoothed_cross_entropy(&z2, cfg.label_smoothing)?;

    // dL/dZ1 = (g1 + g2ᵀ) / 2
    let mut grad_z = g1.add(&g2.transpose());
    grad_z = grad_z.scale(0.5);

    let grad_logit_scale = dot(grad_z.as_slice(), sim.as_slice());
    let grad_u1 = grad_z.matmul(u2).scale(alpha);
    let grad_u2 = grad_z.transposed_matmul(u1).scale(alpha);
    Ok(UnitLoss { loss: 0.5 * (l1 + l2), grad_u1, grad_u2, grad_logit_scale })
}

/// Symmetric InfoNCE: `L = ½ (CE(Z₁, y) + CE(Z₂, y))` with
/// `Z₁ = α · norm(f1) · norm(f2)ᵀ`, `Z₂ = Z₁ᵀ` and `y` the diagonal.
pub fn symmetric_infonce(f1: &Matrix, f2: &Matrix, cfg: &LossConfig) -> Result<LossResult, NumericsError> {
    if f1.shape() != f2.shape() {
        return Err(NumericsError::ShapeMismatch { left: f1.shape(), right: f2.shape() });
    }
    cfg.validate()?;
    let u1 = l2_normalize_rows(f1)?;
    let u2 = l2_normalize_rows(f2)?;
    let unit = infonce_unit(&u1, &u2, cfg)?;
    Ok(LossResult {
        loss: unit.loss,
        grad_f1: normalize_rows_backward(f1, &u1, &unit.grad_u1),
        grad_f2: normalize_rows_backward(f2, &u2, &unit.grad_u2),
        grad_logit_scale: unit.grad_logit_scale,
    })
}
