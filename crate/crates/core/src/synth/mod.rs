//! Deterministic synthetic scenes of labeled boxes, rendered along a camera
//! orbit, with prototype embeddings and ground-truth oracles.

mod corpus;
mod embed;
mod oracle;
mod scene;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use corpus::{fusion_corpus, CorpusPlan, CorpusTarget};
pub use embed::{embedding_table, frame_seed, synth_embeddings, Context, PrototypeEmbedder, PrototypeError};
pub use oracle::{
    ground_truth_vertices, oracle_tracking_metrics, point_instances, InstanceCoverage, SegmentPurity, TrackingMetrics,
};
pub use scene::{
    class_color, quantize_depth, render_frame, room_shell, Orbit, RenderedFrame, SceneBox, SceneLayout, FLOOR, SLAB,
    STANDARD_DEPTH_SCALE, WALL,
};

use crate::descriptor::{DescriptorTriple, EmbeddingTable, FrameData};
use crate::eval::{ClassError, ClassTable};
use crate::exec::Exec;
use crate::geometry::{GeometryError, Keyframe, Pose};
use crate::mapper::{masks_from_id_image, Mask2D, MapperError};

/// Spacing of ground-truth vertices, in meters.
pub const GT_VERTEX_SPACING: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scene: SceneLayout,
    pub dim: usize,
    pub sigma: f64,
    pub gamma: f64,
}

impl SynthConfig {
    /// The standard scene with 32-dimensional embeddings, sigma 0.05, gamma 0.3.
    pub fn standard(seed: u64) -> Self {
        Self { scene: SceneLayout::standard(seed), dim: 32, sigma: 0.05, gamma: 0.3 }
    }

    pub fn embedder(&self) -> Result<PrototypeEmbedder, PrototypeError> {
        PrototypeEmbedder::new(self.dim, self.scene.num_classes(), self.sigma, self.gamma, self.scene.seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthFrame {
    pub index: u32,
    pub pose: Pose,
    pub render: RenderedFrame,
    pub triples: BTreeMap<u32, DescriptorTriple>,
}

impl SynthFrame {
    pub fn keyframe(&self, scene: &SceneLayout) -> Result<Keyframe, GeometryError> {
        self.render.keyframe(self.index, scene.intrinsics, self.pose)
    }

    pub fn masks(&self, scene: &SceneLayout) -> Result<Vec<Mask2D>, MapperError> {
        let k = scene.intrinsics;
        masks_from_id_image(self.index, k.width, k.height, &self.render.ids)
    }

    pub fn embeddings(&self, dim: usize) -> EmbeddingTable {
        embedding_table(&self.triples, dim)
    }

    pub fn frame_data(&self, scene: &SceneLayout, dim: usize) -> Result<Arc<FrameData>, GeometryError> {
        Ok(Arc::new(FrameData { keyframe: self.keyframe(scene)?, embeddings: Some(self.embeddings(dim)) }))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence {
    pub config: SynthConfig,
    pub embedder: PrototypeEmbedder,
    pub frames: Vec<SynthFrame>,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error(transparent)]
    Embedder(#[from] PrototypeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Classes(#[from] ClassError),
    #[error(transparent)]
    Masks(#[from] MapperError),
}

/// Renders every orbit pose and embeds its masks. Frames are independent,
/// so parallel and sequential generation agree bit for bit.
pub fn generate_sequence(config: &SynthConfig, exec: Exec) -> Result<SyntheticSequence, SynthError> {
    let scene = &config.scene;
    scene.validate().map_err(SynthError::Scene)?;
    let embedder = config.embedder()?;
    let poses = scene.orbit.poses()?;
    let frames = exec.map_range(0..poses.len(), |i| {
        let render = render_frame(scene, &poses[i], Exec::Sequential);
        let triples = synth_embeddings(scene, &render.ids, &embedder, frame_seed(scene.seed, i as u32));
        SynthFrame { index: i as u32, pose: poses[i], render, triples }
    });
    Ok(SyntheticSequence { config: config.clone(), embedder, frames })
}

impl SyntheticSequence {
    /// Class names with their prototypes as text embeddings; frequencies are
    /// ground-truth vertex counts.
    pub fn class_table(&self) -> Result<ClassTable, SynthError> {
        let (_, labels) = self.ground_truth();
        let mut freq = vec![0u64; self.config.scene.num_classes()];
        for &l in &labels {
            freq[l as usize] += 1;
        }
        Ok(ClassTable::new(
            self.config.scene.class_names.clone(),
            self.embedder.prototypes().to_vec(),
            freq.into_iter().map(Some).collect(),
        )?)
    }

    pub fn ground_truth(&self) -> (Vec<[f64; 3]>, Vec<i32>) {
        ground_truth_vertices(&self.config.scene, GT_VERTEX_SPACING)
    }
}
