//! Feature-hash bag-of-tokens text vectors.
//!
//! Tokens are lowercase alphanumeric runs, plus one token per CJK character.
//! Each token adds ±1 to bucket `h mod 256` of its FNV-1a hash `h`, with the
//! sign taken from the top hash bit; the count vector is unit-normalized.
//! Text without tokens maps to the zero vector.

use crate::seed::fnv1a64;

pub const FALLBACK_DIM: usize = 256;

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF | 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xAC00..=0xD7AF | 0xF900..=0xFAFF | 0x20000..=0x2A6DF)
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_string());
        } else if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn embed_text(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; FALLBACK_DIM];
    for tok in tokenize(text) {
        let h = fnv1a64(tok.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % FALLBACK_DIM as u64) as usize] += sign;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Stateless embedder handle, usable wherever a text vectorizer is expected.
#[derive(Debug, Clone, Copy, Default)]
pub struct FallbackEmbedder;

impl FallbackEmbedder {
    pub fn embed(&self, text: &str) -> Vec<f64> {
        embed_text(text)
    }

    /// Cosine of two texts; 0 when either has no tokens.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        let (x, y) = (embed_text(a), embed_text(b));
        crate::matrix::dot(&x, &y).clamp(-1.0, 1.0)
    }
}
