//! Descriptor stage: the keyframe queue between mapping and description,
//! three-crop descriptor assembly, fixed-weight fusion and per-segment
//! medoid selection.

mod embed;
mod fusion;
mod medoid;
mod queue;
mod worker;

pub use embed::{
    assemble_triple, build_crops, crop_region, embed_triple, DescriptorTriple, EmbedError, Embedder, EmbeddingTable,
    FrameData, RegionKind, RegionRequest, TableEmbedder,
};
pub use fusion::{fuse_fixed, grid_search_weights, mean_fixed_cosine, weight_grid, FixedWeights, Fusion, FusionError};
pub use medoid::{medoid_descriptor, medoid_index, EmptyPool};
pub use queue::{BoundedQueue, QueueError};
pub use worker::{DescriptorWorker, QueueItem, WorkerStats};

/// Default number of keyframes buffered between mapper and descriptor worker.
pub const DEFAULT_QUEUE_CAPACITY: usize = 8;
