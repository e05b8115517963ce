use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::descriptor::{build_crops, embed_triple, Embedder, FrameData, Fusion};
use crate::map::{Label, WorldMap};
use crate::mapper::Mask2D;

/// One keyframe's worth of descriptor work, produced by the mapper.
#[derive(Clone, Debug)]
pub struct QueueItem {
    pub keyframe_index: u32,
    /// Merged masks with the segment label each was matched to (always >= 0).
    pub merged_masks: Vec<(Label, Mask2D)>,
    pub frame: Arc<FrameData>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkerStats {
    pub updated: usize,
    /// Masks whose keyframe had already left the segment's heap.
    pub stale: usize,
    pub failed: usize,
    /// Crop preparation.
    pub preprocess: Duration,
    /// Embedding, fusion and medoid refresh.
    pub describe: Duration,
}

/// Turns queue items into per-view descriptors on the map.
pub struct DescriptorWorker {
    embedder: Box<dyn Embedder>,
    fusion: Fusion,
}

impl DescriptorWorker {
    pub fn new(embedder: Box<dyn Embedder>, fusion: Fusion) -> Self {
        Self { embedder, fusion }
    }

    pub fn fusion(&self) -> &Fusion {
        &self.fusion
    }

    /// Processes `item` against an exclusively borrowed map.
    pub fn step(&self, map: &mut WorldMap, item: &QueueItem) -> WorkerStats {
        let mut stats = WorkerStats::default();
        let live = select_live(map, item, &mut stats);
        let fused = self.describe(item, &live, &mut stats);
        apply(map, item.keyframe_index, fused, &mut stats);
        stats
    }

    /// Same as [`step`](Self::step), holding the lock only while reading heap
    /// membership and while writing descriptors.
    pub fn step_shared(&self, map: &Mutex<WorldMap>, item: &QueueItem) -> WorkerStats {
        let mut stats = WorkerStats::default();
        let live = select_live(&map.lock().unwrap(), item, &mut stats);
        let fused = self.describe(item, &live, &mut stats);
        apply(&mut map.lock().unwrap(), item.keyframe_index, fused, &mut stats);
        stats
    }

    fn describe(&self, item: &QueueItem, live: &[usize], stats: &mut WorkerStats) -> Vec<(Label, Vec<f64>)> {
        let mut out = Vec::with_capacity(live.len());
        for &i in live {
            let (label, mask) = &item.merged_masks[i];
            let t0 = Instant::now();
            let crops = build_crops(&item.frame, mask);
            let t1 = Instant::now();
            stats.preprocess += t1 - t0;
            let result = embed_triple(&item.frame, mask, crops.as_ref(), self.embedder.as_ref())
                .map_err(|e| e.to_string())
                .and_then(|t| self.fusion.fuse(&t).map_err(|e| e.to_string()));
            stats.describe += t1.elapsed();
            match result {
                Ok(d) => out.push((*label, d.into_inner())),
                Err(e) => {
                    log::warn!("keyframe {}: skipping descriptor of segment {label}: {e}", item.keyframe_index);
                    stats.failed += 1;
                }
            }
        }
        out
    }
}

fn select_live(map: &WorldMap, item: &QueueItem, stats: &mut WorkerStats) -> Vec<usize> {
    let live: Vec<usize> = item
        .merged_masks
        .iter()
        .enumerate()
        .filter(|(_, (label, _))| map.segment(*label).is_some_and(|s| s.views().contains(item.keyframe_index)))
        .map(|(i, _)| i)
        .collect();
    stats.stale += item.merged_masks.len() - live.len();
    live
}

fn apply(map: &mut WorldMap, keyframe: u32, fused: Vec<(Label, Vec<f64>)>, stats: &mut WorkerStats) {
    let t0 = Instant::now();
    for (label, d) in fused {
        match map.set_descriptor(label, keyframe, d) {
            Ok(true) => stats.updated += 1,
            Ok(false) => stats.stale += 1,
            Err(e) => {
                log::warn!("keyframe {keyframe}: rejected descriptor for segment {label}: {e}");
                stats.failed += 1;
            }
        }
    }
    stats.describe += t0.elapsed();
}
