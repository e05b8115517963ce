use thiserror::Error;

use crate::vector::{dot, UnitVector};

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("medoid of an empty pool")]
pub struct EmptyPool;

/// Index of the pool entry with the smallest summed cosine distance
/// `1 - cos` to every entry of the pool. Ties go to the lowest keyframe.
pub fn medoid_index(pool: &[(u32, &UnitVector)]) -> Result<usize, EmptyPool> {
    if pool.is_empty() {
        return Err(EmptyPool);
    }
    let n = pool.len();
    // symmetric; dot(a, b) and dot(b, a) are bitwise equal
    let mut sims = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = dot(pool[i].1, pool[j].1);
            sims[i * n + j] = s;
            sims[j * n + i] = s;
        }
    }
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for i in 0..n {
        let cost: f64 = (0..n).map(|j| 1.0 - sims[i * n + j]).sum();
        if cost < best_cost || (cost == best_cost && pool[i].0 < pool[best].0) {
            best = i;
            best_cost = cost;
        }
    }
    Ok(best)
}

pub fn medoid_descriptor(pool: &[(u32, &UnitVector)]) -> Result<UnitVector, EmptyPool> {
    medoid_index(pool).map(|i| pool[i].1.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uv(v: &[f64]) -> UnitVector {
        UnitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn single_and_pair() {
        let a = uv(&[1.0, 0.0]);
        let b = uv(&[0.0, 1.0]);
        assert_eq!(medoid_index(&[(3, &a)]).unwrap(), 0);
        assert_eq!(medoid_index(&[(7, &a), (2, &b)]).unwrap(), 1, "lower keyframe wins the tie");
        assert_eq!(medoid_index(&[]), Err(EmptyPool));
    }

    #[test]
    fn picks_the_central_vector() {
        let a = uv(&[1.0, 0.0, 0.0]);
        let b = uv(&[1.0, 0.1, 0.0]);
        let c = uv(&[1.0, 0.2, 0.0]);
        let d = uv(&[0.0, 0.0, 1.0]);
        assert_eq!(medoid_index(&[(0, &a), (1, &c), (2, &b), (3, &d)]).unwrap(), 2);
    }
}
