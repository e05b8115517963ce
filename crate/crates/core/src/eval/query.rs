use thiserror::Error;

use crate::eval::ClassTable;
use crate::map::{Label, WorldMap};
use crate::vector::UnitVector;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("query has dimension {actual}, map descriptors have {expected}")]
pub struct QueryDimension {
    pub expected: usize,
    pub actual: usize,
}

/// The `k` described segments most similar to `query`, best first. Ties go
/// to the lower label.
pub fn rank_segments(map: &WorldMap, query: &UnitVector, k: usize) -> Result<Vec<(Label, f64)>, QueryDimension> {
    let mut scored = Vec::new();
    for s in map.segments() {
        if let Some(d) = s.descriptor() {
            if d.dim() != query.dim() {
                return Err(QueryDimension { expected: d.dim(), actual: query.dim() });
            }
            scored.push((s.label, d.cosine(query)));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Best-matching class of every segment, indexed by label; `None` for
/// segments without a descriptor. Ties go to the lower class index.
pub fn classify_segments(map: &WorldMap, classes: &ClassTable) -> Result<Vec<Option<usize>>, QueryDimension> {
    map.segments()
        .iter()
        .map(|s| match s.descriptor() {
            None => Ok(None),
            Some(d) if d.dim() != classes.dim() => Err(QueryDimension { expected: d.dim(), actual: classes.dim() }),
            Some(d) => Ok(Some(argmax_class(d, classes))),
        })
        .collect()
}

pub fn argmax_class(d: &UnitVector, classes: &ClassTable) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, e) in classes.embeddings().iter().enumerate() {
        let s = d.cosine(e);
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

/// Per-point class index (`-1` for unlabeled points and undescribed segments).
pub fn point_classes(map: &WorldMap, segment_classes: &[Option<usize>]) -> Vec<i32> {
    map.points()
        .iter()
        .map(|p| {
            usize::try_from(p.label)
                .ok()
                .and_then(|l| segment_classes.get(l).copied().flatten())
                .map_or(-1, |c| c as i32)
        })
        .collect()
}
