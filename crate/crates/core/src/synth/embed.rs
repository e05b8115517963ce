use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::descriptor::{DescriptorTriple, EmbeddingTable, RegionKind};
use crate::mapper::BBox;
use crate::synth::SceneLayout;
use crate::vector::UnitVector;

#[derive(Debug, Error, PartialEq)]
pub enum PrototypeError {
    #[error("embedding dimension must be positive")]
    Dimension,
    #[error("noise sigma {0} must be finite and >= 0")]
    Sigma(f64),
    #[error("context mixing {0} must lie in [0, 1)")]
    Gamma(f64),
}

/// Stand-in for an image-text embedding model: every class owns a unit
/// prototype and crops embed to noisy, context-polluted prototypes.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeEmbedder {
    prototypes: Vec<UnitVector>,
    dim: usize,
    sigma: f64,
    gamma: f64,
}

/// Visible surroundings of one crop as `(class, weight)` pairs.
pub type Context = [(u32, f64)];

impl PrototypeEmbedder {
    /// Prototypes are orthonormal when `classes <= dim`, otherwise
    /// independent uniform unit vectors.
    pub fn new(dim: usize, classes: usize, sigma: f64, gamma: f64, seed: u64) -> Result<Self, PrototypeError> {
        if dim == 0 {
            return Err(PrototypeError::Dimension);
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(PrototypeError::Sigma(sigma));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(PrototypeError::Gamma(gamma));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prototypes = if classes <= dim {
            let a: DMatrix<f64> = DMatrix::from_fn(dim, classes, |_, _| StandardNormal.sample(&mut rng));
            let q = a.qr().q();
            (0..classes).map(|c| UnitVector::new(q.column(c).iter().copied().collect()).expect("orthonormal column")).collect()
        } else {
            (0..classes).map(|_| random_unit(dim, &mut rng)).collect()
        };
        Ok(Self { prototypes, dim, sigma, gamma })
    }

    pub fn from_prototypes(prototypes: Vec<UnitVector>, sigma: f64, gamma: f64) -> Result<Self, PrototypeError> {
        let dim = prototypes.first().map_or(0, |p| p.dim());
        if dim == 0 || prototypes.iter().any(|p| p.dim() != dim) {
            return Err(PrototypeError::Dimension);
        }
        let mut e = Self::new(dim, 0, sigma, gamma, 0)?;
        e.prototypes = prototypes;
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn prototypes(&self) -> &[UnitVector] {
        &self.prototypes
    }

    pub fn prototype(&self, class: u32) -> &UnitVector {
        &self.prototypes[class as usize]
    }

    fn noisy<R: Rng + ?Sized>(&self, mut v: Vec<f64>, rng: &mut R) -> UnitVector {
        if self.sigma > 0.0 {
            let n = Normal::new(0.0, self.sigma / (self.dim as f64).sqrt()).expect("valid sigma");
            for x in &mut v {
                *x += n.sample(rng);
            }
        }
        UnitVector::new(v.clone()).unwrap_or_else(|_| random_unit(self.dim, rng))
    }

    fn weighted_mean(&self, weights: &Context) -> Option<Vec<f64>> {
        let total: f64 = weights.iter().map(|w| w.1).sum();
        if total <= 0.0 {
            return None;
        }
        let mut m = vec![0.0; self.dim];
        for &(c, w) in weights {
            for (x, p) in m.iter_mut().zip(self.prototype(c).iter()) {
                *x += w / total * p;
            }
        }
        Some(m)
    }

    pub fn masked<R: Rng + ?Sized>(&self, class: u32, rng: &mut R) -> UnitVector {
        self.noisy(self.prototype(class).to_vec(), rng)
    }

    /// Without surroundings the crop sees only its own class.
    pub fn bbox<R: Rng + ?Sized>(&self, class: u32, surroundings: &Context, rng: &mut R) -> UnitVector {
        let p = self.prototype(class);
        let mix = self.weighted_mean(surroundings).unwrap_or_else(|| p.to_vec());
        let v = p.iter().zip(&mix).map(|(a, b)| (1.0 - self.gamma) * a + self.gamma * b).collect();
        self.noisy(v, rng)
    }

    pub fn global<R: Rng + ?Sized>(&self, visible: &[u32], rng: &mut R) -> UnitVector {
        let weights: Vec<(u32, f64)> = visible.iter().map(|&c| (c, 1.0)).collect();
        let m = self.weighted_mean(&weights).unwrap_or_else(|| vec![0.0; self.dim]);
        self.noisy(m, rng)
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> UnitVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(u) = UnitVector::new(v) {
            return u;
        }
    }
}

/// Per-frame generator seed, independent of generation order.
pub fn frame_seed(seed: u64, frame: u32) -> u64 {
    seed ^ (frame as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Triples for every instance visible in an instance-id image, keyed by
/// instance id. The bbox context of a mask is the class histogram of the
/// other hit pixels inside its bounding box; the global context is the set
/// of classes visible anywhere in the frame.
pub fn synth_embeddings(
    scene: &SceneLayout,
    ids: &[u16],
    embedder: &PrototypeEmbedder,
    seed: u64,
) -> BTreeMap<u32, DescriptorTriple> {
    let w = scene.intrinsics.width as usize;
    let class_of: BTreeMap<u16, u32> = scene.boxes.iter().map(|b| (b.instance, b.class)).collect();
    let mut boxes: BTreeMap<u16, BBox> = BTreeMap::new();
    for (i, &id) in ids.iter().enumerate() {
        if id == 0 || !class_of.contains_key(&id) {
            continue;
        }
        let (u, v) = ((i % w) as u32, (i / w) as u32);
        let b = boxes.entry(id).or_insert(BBox { u_min: u, v_min: v, u_max: u, v_max: v });
        *b = b.union(&BBox { u_min: u, v_min: v, u_max: u, v_max: v });
    }
    let mut visible: Vec<u32> = boxes.keys().map(|id| class_of[id]).collect();
    visible.sort_unstable();
    visible.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let global = embedder.global(&visible, &mut rng);
    let mut out = BTreeMap::new();
    for (&id, b) in &boxes {
        let mut hist: BTreeMap<u32, f64> = BTreeMap::new();
        for v in b.v_min..=b.v_max {
            for u in b.u_min..=b.u_max {
                let other = ids[v as usize * w + u as usize];
                if other != 0 && other != id {
                    if let Some(&c) = class_of.get(&other) {
                        *hist.entry(c).or_default() += 1.0;
                    }
                }
            }
        }
        let context: Vec<(u32, f64)> = hist.into_iter().collect();
        let class = class_of[&id];
        let masked = embedder.masked(class, &mut rng);
        let bbox = embedder.bbox(class, &context, &mut rng);
        out.insert(id as u32, DescriptorTriple::new(global.clone(), masked, bbox).expect("shared dimension"));
    }
    out
}

/// Embedding records for a frame: one full-frame record under mask id 0 and
/// masked plus bbox records per instance.
pub fn embedding_table(triples: &BTreeMap<u32, DescriptorTriple>, dim: usize) -> EmbeddingTable {
    let mut t = EmbeddingTable::new(dim);
    let to32 = |v: &UnitVector| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    if let Some(first) = triples.values().next() {
        t.insert(0, RegionKind::Full, to32(&first.global));
    }
    for (&id, tr) in triples {
        t.insert(id, RegionKind::Masked, to32(&tr.masked));
        t.insert(id, RegionKind::Bbox, to32(&tr.bbox));
    }
    t
}
