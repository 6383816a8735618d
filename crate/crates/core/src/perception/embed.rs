use super::{FrameRef, PerceptionError};
use crate::hashing::seeded_hash;

/// Embeddings must have Euclidean norm within this distance of 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Text and image embedding backends. Both produce L2-normalized vectors of
/// [`Embedder::dim`] components; the two spaces are kept separate.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, PerceptionError>;
    fn embed_image(&self, frame: &FrameRef) -> Result<Vec<f64>, PerceptionError>;
}

/// Deterministic hash-expansion embedder.
///
/// Each lowercase alphanumeric token is hashed into [`HashEmbedder::PROBES`]
/// buckets with a pseudo-random sign; the accumulated vector is normalized.
/// Texts sharing tokens therefore have positive cosine similarity roughly
/// proportional to their overlap.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub const PROBES: usize = 4;

    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn embed_tokens(&self, space: &str, text: &str) -> Result<Vec<f64>, PerceptionError> {
        let mut v = vec![0.0; self.dim];
        let mut any = false;
        for token in tokenize(text) {
            any = true;
            for probe in 0..Self::PROBES {
                let h = seeded_hash(self.seed, &[space, &token, &probe.to_string()]);
                let bucket = (h % self.dim as u64) as usize;
                let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
                v[bucket] += sign;
            }
        }
        if !any {
            return Err(PerceptionError::EmptyInput);
        }
        // Colliding probes that cancel exactly leave a zero vector.
        l2_normalize(&mut v).then_some(v).ok_or(PerceptionError::EmptyInput)
    }

    fn check(&self, v: &[f64]) -> Result<(), PerceptionError> {
        if v.len() != self.dim {
            return Err(PerceptionError::DimensionMismatch { expected: self.dim, actual: v.len() });
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(PerceptionError::NotUnitNorm(norm));
        }
        Ok(())
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, PerceptionError> {
        if text.trim().is_empty() {
            return Err(PerceptionError::EmptyInput);
        }
        self.embed_tokens("text", text)
    }

    /// Uses the precomputed embedding when present, otherwise hashes the
    /// frame reference in a separate image space.
    fn embed_image(&self, frame: &FrameRef) -> Result<Vec<f64>, PerceptionError> {
        if let Some(v) = &frame.embedding {
            self.check(v)?;
            return Ok(v.clone());
        }
        match frame.reference.as_deref() {
            Some(r) if !r.trim().is_empty() => self.embed_tokens("image", r),
            _ => Err(PerceptionError::EmptyFrame),
        }
    }
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

/// Normalizes in place; returns false for a zero vector.
pub fn l2_normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// Cosine similarity; `None` on dimension mismatch or a zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot / (na * nb))
}
