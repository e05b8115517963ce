//! End-to-end driver: mapper, keyframe queue and descriptor worker.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::descriptor::{BoundedQueue, DescriptorWorker, Embedder, FrameData, Fusion, QueueItem, WorkerStats};
use crate::eval::{Stage, TimingReport};
use crate::io::{FusionConfig, IoError, LoadedFrame, PipelineConfig};
use crate::map::WorldMap;
use crate::mapper::{MapperError, SegmentMapper};
use crate::merger::{load_checkpoint, CheckpointError};
use crate::synth::{SynthError, SyntheticSequence};
use crate::Exec;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("keyframe {frame}: {source}")]
    Mapper { frame: u32, source: MapperError },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("keyframe {frame}: embeddings have dimension {actual}, expected {expected}")]
    Dimension { frame: u32, expected: usize, actual: usize },
    #[error("descriptor worker panicked")]
    Worker,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub keyframes: usize,
    pub created: usize,
    pub discarded: usize,
    pub descriptor_updates: usize,
    pub stale: usize,
    pub failed: usize,
}

impl RunStats {
    fn absorb(&mut self, w: &WorkerStats) {
        self.descriptor_updates += w.updated;
        self.stale += w.stale;
        self.failed += w.failed;
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub map: WorldMap,
    pub timing: TimingReport,
    pub stats: RunStats,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub fusion: Fusion,
    pub exec: Exec,
}

impl Pipeline {
    /// Builds the fusion named by the config, loading the merger checkpoint
    /// when one is configured.
    pub fn from_config(config: PipelineConfig, exec: Exec) -> Result<Self, PipelineError> {
        config.validate().map_err(PipelineError::Config)?;
        let fusion = match &config.fusion {
            FusionConfig::Fixed { weights } => Fusion::Fixed(*weights),
            FusionConfig::Merger { checkpoint } => {
                let p = load_checkpoint(checkpoint)?;
                if let Some(d) = config.dim.filter(|&d| d != p.dim()) {
                    return Err(PipelineError::Config(format!("checkpoint dimension {} but dim = {d}", p.dim())));
                }
                Fusion::Merger(Arc::new(p))
            }
        };
        Ok(Self { config, fusion, exec })
    }

    fn expected_dim(&self) -> Option<usize> {
        match &self.fusion {
            Fusion::Merger(p) => Some(p.dim()),
            Fusion::Fixed(_) => self.config.dim,
        }
    }

    fn check_dim(&self, f: &LoadedFrame) -> Result<(), PipelineError> {
        match (self.expected_dim(), &f.embeddings) {
            (Some(expected), Some(t)) if t.dim != expected => {
                Err(PipelineError::Dimension { frame: f.keyframe.index, expected, actual: t.dim })
            }
            _ => Ok(()),
        }
    }

    /// Maps every frame in order. In deterministic mode each keyframe's
    /// descriptors are computed before the next keyframe is mapped;
    /// otherwise a worker thread drains a bounded queue concurrently.
    pub fn run<I>(&self, frames: I, embedder: Box<dyn Embedder>) -> Result<RunOutput, PipelineError>
    where
        I: IntoIterator<Item = Result<LoadedFrame, IoError>>,
    {
        let worker = DescriptorWorker::new(embedder, self.fusion.clone());
        if self.config.deterministic {
            self.run_lag0(frames, &worker)
        } else {
            self.run_concurrent(frames, &worker)
        }
    }

    fn run_lag0<I>(&self, frames: I, worker: &DescriptorWorker) -> Result<RunOutput, PipelineError>
    where
        I: IntoIterator<Item = Result<LoadedFrame, IoError>>,
    {
        let cfg = &self.config;
        let mut map = WorldMap::new(cfg.mapper.heap_capacity).map_err(|e| PipelineError::Config(e.to_string()))?;
        let mut mapper = SegmentMapper::new(cfg.mapper, cfg.geometry, self.exec);
        let mut timing = TimingReport::default();
        let mut stats = RunStats::default();
        let mut frames = frames.into_iter();
        loop {
            let t0 = Instant::now();
            let Some(frame) = frames.next() else { break };
            let frame = frame?;
            let seg = t0.elapsed();
            self.check_dim(&frame)?;
            let index = frame.keyframe.index;
            let (item, map_time) = map_one(&mut mapper, &mut map, frame, &mut stats)?;
            let w = worker.step(&mut map, &item);
            stats.absorb(&w);
            record(&mut timing, index, seg, map_time, &w);
            timing.record_wall(index, t0.elapsed().as_secs_f64());
        }
        Ok(RunOutput { map, timing, stats })
    }

    fn run_concurrent<I>(&self, frames: I, worker: &DescriptorWorker) -> Result<RunOutput, PipelineError>
    where
        I: IntoIterator<Item = Result<LoadedFrame, IoError>>,
    {
        let cfg = &self.config;
        let map = Mutex::new(WorldMap::new(cfg.mapper.heap_capacity).map_err(|e| PipelineError::Config(e.to_string()))?);
        let queue: BoundedQueue<QueueItem> = BoundedQueue::new(cfg.queue_capacity).map_err(|e| PipelineError::Config(e.to_string()))?;
        let mut mapper = SegmentMapper::new(cfg.mapper, cfg.geometry, self.exec);
        let mut stats = RunStats::default();
        let mut walls = Vec::new();
        let mut front = Vec::new();

        let (produced, consumed) = std::thread::scope(|s| {
            let consumer = s.spawn(|| {
                let mut out = Vec::new();
                while let Some(item) = queue.dequeue() {
                    out.push((item.keyframe_index, worker.step_shared(&map, &item)));
                }
                out
            });
            let produced = (|| -> Result<(), PipelineError> {
                let mut frames = frames.into_iter();
                loop {
                    let t0 = Instant::now();
                    let Some(frame) = frames.next() else { return Ok(()) };
                    let frame = frame?;
                    let seg = t0.elapsed();
                    self.check_dim(&frame)?;
                    let index = frame.keyframe.index;
                    let (item, map_time) = map_one(&mut mapper, &mut map.lock().unwrap(), frame, &mut stats)?;
                    queue.enqueue(item).expect("queue closes only after the producer finishes");
                    front.push((index, seg, map_time));
                    walls.push((index, t0.elapsed()));
                }
            })();
            queue.close();
            (produced, consumer.join())
        });
        produced?;
        let consumed = consumed.map_err(|_| PipelineError::Worker)?;

        let mut timing = TimingReport::default();
        let by_frame: std::collections::BTreeMap<u32, WorkerStats> = consumed.into_iter().collect();
        for (index, seg, map_time) in front {
            let w = by_frame.get(&index).cloned().unwrap_or_default();
            stats.absorb(&w);
            record(&mut timing, index, seg, map_time, &w);
        }
        for (index, wall) in walls {
            timing.record_wall(index, wall.as_secs_f64());
        }
        let map = map.into_inner().unwrap();
        Ok(RunOutput { map, timing, stats })
    }
}

fn map_one(
    mapper: &mut SegmentMapper,
    map: &mut WorldMap,
    frame: LoadedFrame,
    stats: &mut RunStats,
) -> Result<(QueueItem, Duration), PipelineError> {
    let index = frame.keyframe.index;
    let out = mapper.process(map, &frame.keyframe, &frame.masks).map_err(|source| PipelineError::Mapper { frame: index, source })?;
    stats.keyframes += 1;
    stats.created += out.stats.created;
    stats.discarded += out.stats.discarded;
    let merged_masks = out.accepted.into_iter().map(|a| (a.mask.matched_label, a.mask)).collect();
    let data = Arc::new(FrameData { keyframe: frame.keyframe, embeddings: frame.embeddings });
    Ok((QueueItem { keyframe_index: index, merged_masks, frame: data }, out.stats.elapsed))
}

fn record(timing: &mut TimingReport, index: u32, seg: Duration, map_time: Duration, w: &WorkerStats) {
    timing.record_stage(index, Stage::Seg, seg.as_secs_f64());
    timing.record_stage(index, Stage::MapTrack, map_time.as_secs_f64());
    timing.record_stage(index, Stage::Preprocess, w.preprocess.as_secs_f64());
    timing.record_stage(index, Stage::Clip, w.describe.as_secs_f64());
}

/// In-memory frames of a synthetic sequence, in the shape [`Pipeline::run`] consumes.
pub fn synthetic_frames(seq: &SyntheticSequence) -> Result<Vec<LoadedFrame>, SynthError> {
    let scene = &seq.config.scene;
    seq.frames
        .iter()
        .map(|f| {
            Ok(LoadedFrame {
                keyframe: f.keyframe(scene)?,
                masks: f.masks(scene)?,
                embeddings: Some(f.embeddings(seq.config.dim)),
            })
        })
        .collect()
}
