//! Online open-vocabulary 3D semantic mapping.
//!
//! Posed RGB-D keyframes, per-frame instance masks and per-mask embedding
//! vectors go in; a labeled point cloud partitioned into tracked segments,
//! each carrying one fused descriptor, comes out.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod descriptor;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod io;
pub mod map;
pub mod mapper;
pub mod merger;
pub mod pipeline;
pub mod synth;
pub mod vector;

pub use exec::Exec;
pub use map::{Label, MapPoint, Segment, ViewEntry, WorldMap, UNLABELED};
pub use vector::UnitVector;
