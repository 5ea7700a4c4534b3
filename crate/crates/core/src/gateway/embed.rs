use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use super::{Embedder, EmbeddingVector, ProviderError};

/// Deterministic local embedder: each token seeds a pseudo-random direction
/// from its SHA-256, and a text's vector is the normalized sum over its token
/// multiset. Texts sharing vocabulary land close together.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dimension: 64 }
    }
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    fn tokens(text: &str) -> Vec<String> {
        let tokens: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_lowercase())
            .collect();
        if tokens.is_empty() {
            vec![text.trim().to_string()]
        } else {
            tokens
        }
    }

    fn token_direction(&self, token: &str) -> Vec<f64> {
        let seed: [u8; 32] = Sha256::digest(token.as_bytes()).into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dimension)
            .map(|_| {
                let unit = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                2.0 * unit - 1.0
            })
            .collect()
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut acc = vec![0.0; self.dimension];
        for token in Self::tokens(text) {
            for (a, v) in acc.iter_mut().zip(self.token_direction(&token)) {
                *a += v;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector::new(acc)
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> Result<usize, ProviderError> {
        Ok(self.dimension)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let na = a.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}
