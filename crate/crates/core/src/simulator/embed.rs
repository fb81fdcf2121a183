use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{SceneSpec, SimError, Vocabulary};
use crate::model_gateway::{fnv1a64, Embedder, GatewayError, HashEmbedder};
use crate::semantic_space::RegionEntry;

pub const DEFAULT_SIGMA: f64 = 0.05;

// Weights of the components mixed into region, global and text vectors.
const AREA_WEIGHT: f64 = 0.3;
const GLOBAL_AREA_WEIGHT: f64 = 0.5;
const STYLE_WEIGHT: f64 = 0.8;
const FREE_WORD_WEIGHT: f64 = 0.5;

/// Synthetic visual and text features. Every vocabulary term owns an
/// orthonormal base vector; views add seeded Gaussian noise.
#[derive(Clone, Debug)]
pub struct SyntheticEmbedder {
    dim: usize,
    seed: u64,
    sigma: f64,
    bases: HashMap<String, Vec<f64>>,
    vocab: Vocabulary,
    words: HashEmbedder,
}

fn normalize(v: &mut [f64]) -> Result<(), SimError> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n.is_finite() && n > 0.0) {
        return Err(SimError::Embedding("zero vector".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|x| *x as f32).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

impl SyntheticEmbedder {
    pub fn new(vocab: &Vocabulary, dim: usize, seed: u64, sigma: f64) -> Result<Self, SimError> {
        let names: Vec<&String> = vocab.categories.iter().chain(&vocab.areas).chain(&vocab.colors).collect();
        if dim < names.len() {
            return Err(SimError::Embedding(format!(
                "dimension {dim} cannot hold {} orthogonal vocabulary vectors",
                names.len()
            )));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(SimError::Embedding("noise scale must be non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut done: Vec<Vec<f64>> = Vec::with_capacity(names.len());
        let mut bases = HashMap::new();
        for name in names {
            let mut v = gaussian(&mut rng, dim);
            for b in &done {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            normalize(&mut v)?;
            bases.insert(name.clone(), v.clone());
            done.push(v);
        }
        Ok(Self {
            dim,
            seed,
            sigma,
            bases,
            vocab: vocab.clone(),
            words: HashEmbedder::new(dim, seed ^ 0x5eed),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn base(&self, name: &str) -> Option<Vec<f32>> {
        self.bases.get(name).map(|v| to_f32(v))
    }

    fn base_or_err(&self, name: &str) -> Result<&Vec<f64>, SimError> {
        self.bases
            .get(name)
            .ok_or_else(|| SimError::Embedding(format!("{name:?} is not in the vocabulary")))
    }

    /// normalize(category + 0.3·area + noise), noise seeded by the view and object.
    pub fn region_embedding(&self, category: &str, area: &str, image_ref: &str, object: usize) -> Result<Vec<f32>, SimError> {
        let c = self.base_or_err(category)?;
        let a = self.base_or_err(area)?;
        let key = format!("{image_ref}#{object}");
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(key.as_bytes()) ^ self.seed);
        let scale = self.sigma / (self.dim as f64).sqrt();
        let mut v: Vec<f64> = c
            .iter()
            .zip(a)
            .map(|(c, a)| {
                let n: f64 = StandardNormal.sample(&mut rng);
                c + AREA_WEIGHT * a + scale * n
            })
            .collect();
        normalize(&mut v)?;
        Ok(to_f32(&v))
    }

    pub fn scene_style(&self, scene: &SceneSpec) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(scene.name.as_bytes()) ^ scene.seed.rotate_left(17) ^ self.seed);
        let mut v = gaussian(&mut rng, self.dim);
        normalize(&mut v).expect("gaussian vector is non-zero");
        v
    }

    /// normalize(mean of regions + 0.5·area + 0.8·scene style).
    pub fn global_embedding(&self, regions: &[RegionEntry], area: Option<&str>, scene: &SceneSpec) -> Result<Vec<f32>, SimError> {
        let mut v = vec![0.0f64; self.dim];
        if !regions.is_empty() {
            let k = regions.len() as f64;
            for r in regions {
                v.iter_mut().zip(&r.embedding).for_each(|(x, e)| *x += f64::from(*e) / k);
            }
        }
        if let Some(a) = area {
            let b = self.base_or_err(a)?;
            v.iter_mut().zip(b).for_each(|(x, e)| *x += GLOBAL_AREA_WEIGHT * e);
        }
        v.iter_mut()
            .zip(self.scene_style(scene))
            .for_each(|(x, e)| *x += STYLE_WEIGHT * e);
        normalize(&mut v)?;
        Ok(to_f32(&v))
    }
}

/// Text: vocabulary terms map to their base vectors; other words add a
/// down-weighted bag-of-words vector.
impl Embedder for SyntheticEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        let (terms, rest) = self.vocab.scan(text);
        let mut v = vec![0.0f64; self.dim];
        for (_, t) in &terms {
            v.iter_mut().zip(&self.bases[t]).for_each(|(x, b)| *x += b);
        }
        if !rest.is_empty() {
            let w = self.words.embed_raw(&rest.join(" "))?;
            let weight = if terms.is_empty() { 1.0 } else { FREE_WORD_WEIGHT };
            v.iter_mut().zip(w).for_each(|(x, b)| *x += weight * f64::from(b));
        }
        if terms.is_empty() && rest.is_empty() {
            return self.words.embed_raw(text);
        }
        normalize(&mut v).map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(to_f32(&v))
    }
}
