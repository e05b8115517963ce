use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::DescriptorTriple;
use crate::exec::Exec;
use crate::merger::{merger_forward, MergerError, MergerParams};
use crate::vector::{UnitVector, VectorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("degenerate fusion (norm {0:e})")]
    Degenerate(f64),
    #[error("weights must lie in [0, 1]")]
    WeightRange,
    #[error("grid step must lie in (0, 1]")]
    GridStep,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Merger(#[from] MergerError),
}

/// `alpha` mixes masked vs bbox crops; `beta` mixes local vs global.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for FixedWeights {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.5 }
    }
}

impl FixedWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, FusionError> {
        if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
            return Err(FusionError::WeightRange);
        }
        Ok(Self { alpha, beta })
    }
}

/// `normalize(beta * (alpha * masked + (1 - alpha) * bbox) + (1 - beta) * global)`.
pub fn fuse_fixed(t: &DescriptorTriple, w: FixedWeights) -> Result<UnitVector, FusionError> {
    let (a, b) = (w.alpha, w.beta);
    let v: Vec<f64> = (0..t.dim())
        .map(|j| b * (a * t.masked[j] + (1.0 - a) * t.bbox[j]) + (1.0 - b) * t.global[j])
        .collect();
    UnitVector::new(v).map_err(|e| match e {
        VectorError::Degenerate(n) => FusionError::Degenerate(n),
        _ => FusionError::Degenerate(f64::NAN),
    })
}

/// Grid values `0, step, 2 step, ...` up to 1, always ending at exactly 1.
pub fn weight_grid(step: f64) -> Result<Vec<f64>, FusionError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(FusionError::GridStep);
    }
    let n = (1.0 / step + 1e-9).floor() as usize;
    let mut g: Vec<f64> = (0..=n).map(|i| (i as f64 * step).min(1.0)).collect();
    if (1.0 - g[n]).abs() > 1e-9 {
        g.push(1.0);
    } else {
        g[n] = 1.0;
    }
    Ok(g)
}

/// Mean cosine between fused descriptors and targets. Degenerate fusions
/// contribute zero similarity.
pub fn mean_fixed_cosine(corpus: &[(DescriptorTriple, UnitVector)], w: FixedWeights) -> f64 {
    let total: f64 = corpus
        .iter()
        .map(|(t, target)| fuse_fixed(t, w).map(|d| d.cosine(target)).unwrap_or(0.0))
        .sum();
    total / corpus.len() as f64
}

/// Exhaustive search over the `(alpha, beta)` grid for the highest mean
/// cosine to target. Ties resolve to the lexicographically smallest pair.
pub fn grid_search_weights(
    corpus: &[(DescriptorTriple, UnitVector)],
    step: f64,
    exec: Exec,
) -> Result<(FixedWeights, f64), FusionError> {
    if corpus.is_empty() {
        return Err(FusionError::EmptyCorpus);
    }
    let grid = weight_grid(step)?;
    let cells: Vec<FixedWeights> =
        grid.iter().flat_map(|&alpha| grid.iter().map(move |&beta| FixedWeights { alpha, beta })).collect();
    let scores = exec.map(&cells, |&w| mean_fixed_cosine(corpus, w));
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok((cells[best], scores[best]))
}

/// How per-view triples are fused into one descriptor.
#[derive(Clone, Debug)]
pub enum Fusion {
    Fixed(FixedWeights),
    Merger(Arc<MergerParams>),
}

impl Default for Fusion {
    fn default() -> Self {
        Fusion::Fixed(FixedWeights::default())
    }
}

impl Fusion {
    pub fn fuse(&self, t: &DescriptorTriple) -> Result<UnitVector, FusionError> {
        match self {
            Fusion::Fixed(w) => fuse_fixed(t, *w),
            Fusion::Merger(p) => Ok(merger_forward(p, t)?.descriptor),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uv(v: &[f64]) -> UnitVector {
        UnitVector::new(v.to_vec()).unwrap()
    }

    fn triple(g: &[f64], m: &[f64], b: &[f64]) -> DescriptorTriple {
        DescriptorTriple::new(uv(g), uv(m), uv(b)).unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> UnitVector {
        UnitVector::new((0..d).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap()
    }

    #[test]
    fn identity_weights_select_masked() {
        let t = triple(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]);
        assert_eq!(fuse_fixed(&t, FixedWeights::new(1.0, 1.0).unwrap()).unwrap(), t.masked);
    }

    #[test]
    fn equal_inputs_are_a_fixed_point() {
        let u = [0.6, 0.8];
        let t = triple(&u, &u, &u);
        for (a, b) in [(0.0, 0.0), (0.3, 0.9), (1.0, 0.2)] {
            let d = fuse_fixed(&t, FixedWeights::new(a, b).unwrap()).unwrap();
            assert!((d[0] - 0.6).abs() < 1e-12 && (d[1] - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_mix() {
        // local = 0.5 [1,0] + 0.5 [0,1]; d = 0.5 local + 0.5 [1,0] = [0.75, 0.25]
        let t = triple(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]);
        let d = fuse_fixed(&t, FixedWeights::default()).unwrap();
        let n = (0.75f64 * 0.75 + 0.25 * 0.25).sqrt();
        assert!((d[0] - 0.75 / n).abs() < 1e-12 && (d[1] - 0.25 / n).abs() < 1e-12);
        assert!((d[0] - 0.9487).abs() < 1e-4 && (d[1] - 0.3162).abs() < 1e-4);
    }

    #[test]
    fn degenerate_and_range_errors() {
        let t = triple(&[1.0, 0.0], &[1.0, 0.0], &[-1.0, 0.0]);
        assert!(matches!(fuse_fixed(&t, FixedWeights::new(0.5, 1.0).unwrap()), Err(FusionError::Degenerate(_))));
        assert_eq!(FixedWeights::new(1.2, 0.0), Err(FusionError::WeightRange));
        assert_eq!(grid_search_weights(&[], 0.1, Exec::Sequential).unwrap_err(), FusionError::EmptyCorpus);
        assert_eq!(weight_grid(0.0).unwrap_err(), FusionError::GridStep);
    }

    #[test]
    fn grid_has_exact_endpoints() {
        let g = weight_grid(0.1).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!((g[0], g[10]), (0.0, 1.0));
        assert_eq!(weight_grid(0.3).unwrap(), vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
    }

    #[test]
    fn grid_search_trivial_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let corpus: Vec<DescriptorTriple> = (0..20)
            .map(|_| DescriptorTriple::new(random_unit(&mut rng, 6), random_unit(&mut rng, 6), random_unit(&mut rng, 6)).unwrap())
            .collect();
        let to_masked: Vec<_> = corpus.iter().map(|t| (t.clone(), t.masked.clone())).collect();
        assert_eq!(grid_search_weights(&to_masked, 0.1, Exec::Parallel).unwrap().0, FixedWeights { alpha: 1.0, beta: 1.0 });
        let to_global: Vec<_> = corpus.iter().map(|t| (t.clone(), t.global.clone())).collect();
        assert_eq!(grid_search_weights(&to_global, 0.1, Exec::Parallel).unwrap().0, FixedWeights { alpha: 0.0, beta: 0.0 });
    }

    #[test]
    fn grid_search_matches_independent_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let corpus: Vec<(DescriptorTriple, UnitVector)> = (0..30)
            .map(|_| {
                let t = DescriptorTriple::new(random_unit(&mut rng, 5), random_unit(&mut rng, 5), random_unit(&mut rng, 5)).unwrap();
                (t, random_unit(&mut rng, 5))
            })
            .collect();
        let (w, _) = grid_search_weights(&corpus, 0.25, Exec::Parallel).unwrap();
        // independent re-implementation: plain loops over i/4
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for ia in 0..=4 {
            for ib in 0..=4 {
                let (a, b) = (ia as f64 / 4.0, ib as f64 / 4.0);
                let mut total = 0.0;
                for (t, y) in &corpus {
                    let mut d = [0.0; 5];
                    for j in 0..5 {
                        d[j] = b * a * t.masked[j] + b * (1.0 - a) * t.bbox[j] + (1.0 - b) * t.global[j];
                    }
                    let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                    total += d.iter().zip(y.iter()).map(|(x, y)| x * y).sum::<f64>() / n;
                }
                let mean = total / corpus.len() as f64;
                if mean > best.0 + 1e-12 {
                    best = (mean, a, b);
                }
            }
        }
        assert_eq!((w.alpha, w.beta), (best.1, best.2));
    }

    #[test]
    fn fusion_commutes_with_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = DescriptorTriple::new(random_unit(&mut rng, 3), random_unit(&mut rng, 3), random_unit(&mut rng, 3)).unwrap();
        let rot = nalgebra::Rotation3::new(nalgebra::Vector3::new(0.3, -1.1, 0.7));
        let r = |u: &UnitVector| {
            let v = rot * nalgebra::Vector3::from_column_slice(u.as_slice());
            UnitVector::new(v.as_slice().to_vec()).unwrap()
        };
        let rt = DescriptorTriple::new(r(&t.global), r(&t.masked), r(&t.bbox)).unwrap();
        let w = FixedWeights::new(0.3, 0.7).unwrap();
        let a = r(&fuse_fixed(&t, w).unwrap());
        let b = fuse_fixed(&rt, w).unwrap();
        for j in 0..3 {
            assert!((a[j] - b[j]).abs() < 1e-12);
        }
    }
}
