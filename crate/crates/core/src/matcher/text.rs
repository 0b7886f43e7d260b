use serde::{Deserialize, Serialize};

use crate::error::{bad_param, FlowError, Result};

/// Width of the hashed fallback embedding.
pub const TEXT_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    ExternalService,
    HashedFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding {
    /// Unit length.
    pub vector: Vec<f64>,
    pub source: EmbeddingSource,
}

/// Maps free text to unit vectors of a fixed width.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<TextEmbedding>>;

    fn embed(&self, text: &str) -> Result<TextEmbedding> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        if out.len() != 1 {
            return Err(FlowError::ServiceUnavailable(format!("expected 1 embedding, got {}", out.len())));
        }
        Ok(out.pop().unwrap())
    }
}

/// Signed feature hashing of character trigrams. Text is lowercased, runs of
/// whitespace collapse to one space, and one space pads each end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEmbedder {
    dim: usize,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self { dim: TEXT_DIM }
    }
}

impl HashedEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(bad_param("embedding width must be positive"));
        }
        Ok(Self { dim })
    }

    pub fn vector(&self, text: &str) -> Result<Vec<f64>> {
        let norm = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        if norm.is_empty() {
            return Err(FlowError::EmptyQuery);
        }
        let chars: Vec<char> = format!(" {norm} ").chars().collect();
        let mut v = vec![0.0; self.dim];
        let mut buf = String::with_capacity(12);
        for w in chars.windows(3) {
            buf.clear();
            buf.extend(w);
            let h = fnv1a(buf.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let n = super::norm(&v);
        if n == 0.0 {
            return Err(bad_param(format!("text `{text}` hashes to the zero vector")));
        }
        v.iter_mut().for_each(|x| *x /= n);
        Ok(v)
    }
}

impl TextEmbedder for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<TextEmbedding>> {
        texts
            .iter()
            .map(|t| Ok(TextEmbedding { vector: self.vector(t)?, source: EmbeddingSource::HashedFallback }))
            .collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn embed_text_fallback(text: &str) -> Result<TextEmbedding> {
    HashedEmbedder::default().embed(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::dot;

    #[test]
    fn fallback_is_deterministic_and_unit() {
        let a = embed_text_fallback("Spiral vortex near the wall").unwrap();
        let b = embed_text_fallback("spiral   VORTEX near the wall").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vector.len(), TEXT_DIM);
        assert!((dot(&a.vector, &a.vector).sqrt() - 1.0).abs() < 1e-9);
        assert_eq!(a.source, EmbeddingSource::HashedFallback);
    }

    #[test]
    fn blank_text_is_an_empty_query() {
        assert!(matches!(embed_text_fallback(""), Err(FlowError::EmptyQuery)));
        assert!(matches!(embed_text_fallback(" \t\n"), Err(FlowError::EmptyQuery)));
    }

    #[test]
    fn unrelated_phrases_are_dissimilar() {
        let a = embed_text_fallback("spiral vortex").unwrap();
        let b = embed_text_fallback("straight laminar flow").unwrap();
        let c = dot(&a.vector, &b.vector);
        assert!(c < 0.5);
        assert!((c - GOLDEN_SPIRAL_VS_LAMINAR).abs() < 1e-12, "{c:.17}");
    }

    const GOLDEN_SPIRAL_VS_LAMINAR: f64 = 0.0;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
