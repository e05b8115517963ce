//! Querying, classification, label transfer, semantic metrics and timing.

mod classes;
mod kdtree;
mod metrics;
mod query;
mod timing;

pub use classes::{
    load_class_table, read_class_table, save_class_table, write_class_table, ClassError, ClassTable, CLASS_MAGIC,
    CLASS_VERSION, QUERY_TEMPLATE,
};
pub use kdtree::{dist2, transfer_labels, vote, KdTree, TransferError};
pub use metrics::{compute_metrics, tertiles, ClassMetrics, EvalReport, GroupMetrics, MetricsError};
pub use query::{argmax_class, classify_segments, point_classes, rank_segments, QueryDimension};
pub use timing::{FrameTiming, Stage, TimingReport, TimingSummary, TOTAL_COLUMN};

/// Neighbors consulted per ground-truth vertex during label transfer.
pub const DEFAULT_TRANSFER_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Query(#[from] QueryDimension),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Classifies every segment, transfers the per-point classes onto the
/// ground-truth vertices with `k` neighbors and scores them.
pub fn evaluate_map(
    map: &crate::WorldMap,
    classes: &ClassTable,
    vertices: &[[f64; 3]],
    gt: &[i32],
    k: usize,
) -> Result<EvalReport, EvalError> {
    let segment_classes = classify_segments(map, classes)?;
    let labels = point_classes(map, &segment_classes);
    let cloud: Vec<[f64; 3]> = map.points().iter().map(|p| p.position.map(f64::from)).collect();
    let pred = transfer_labels(&cloud, &labels, vertices, k)?;
    Ok(compute_metrics(&pred, gt, classes.len(), Some(classes.names()))?)
}
