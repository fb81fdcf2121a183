use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Embedder, GatewayError};

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Deterministic bag-of-words embedder: each lowercase token maps to a seeded
/// Gaussian vector and a text embeds as the normalized sum of its tokens, so
/// texts sharing words are similar.
#[derive(Clone, Debug)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(token.as_bytes()) ^ self.seed);
        (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }
}

pub(crate) fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        let mut toks = tokens(text);
        if toks.is_empty() {
            toks.push(text.to_string());
        }
        let mut acc = vec![0.0f64; self.dim];
        for t in &toks {
            for (a, v) in acc.iter_mut().zip(self.token_vector(t)) {
                *a += v;
            }
        }
        let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(acc.iter().map(|v| (v / n) as f32).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topk::cosine;

    #[test]
    fn shared_words_are_similar() {
        let e = HashEmbedder::new(256, 1);
        let a = e.embed_raw("what color is the towel in the bathroom").unwrap();
        let b = e.embed_raw("what color is the sofa in the bathroom").unwrap();
        let c = e.embed_raw("navigate to refrigerator").unwrap();
        assert!(cosine(&a, &b) > 0.6);
        assert!(cosine(&a, &c) < 0.3);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
