use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    /// Obtaining the keyframe's instance masks.
    Seg,
    /// Segment mapping and tracking.
    MapTrack,
    /// Crop preparation for the embedder.
    Preprocess,
    /// Embedding, fusion and medoid refresh.
    Clip,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Seg, Stage::MapTrack, Stage::Preprocess, Stage::Clip];

    pub fn column(self) -> &'static str {
        match self {
            Stage::Seg => "Seg",
            Stage::MapTrack => "M&T",
            Stage::Preprocess => "PP",
            Stage::Clip => "CLIP",
        }
    }
}

pub const TOTAL_COLUMN: &str = "s/KF";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub stages: [f64; 4],
    /// Time spent in the keyframe step outside of any stage.
    pub overhead: f64,
}

impl FrameTiming {
    pub fn total(&self) -> f64 {
        self.stages.iter().sum::<f64>() + self.overhead
    }
}

/// Per-keyframe stage durations in seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub frames: BTreeMap<u32, FrameTiming>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub keyframes: usize,
    pub seg: f64,
    pub map_track: f64,
    pub preprocess: f64,
    pub clip: f64,
    pub seconds_per_keyframe: f64,
}

impl TimingSummary {
    pub fn stage_means(&self) -> [f64; 4] {
        [self.seg, self.map_track, self.preprocess, self.clip]
    }

    /// Two-line table: column headers, then mean seconds.
    pub fn table(&self) -> String {
        let mut head = String::new();
        let mut row = String::new();
        let cols = Stage::ALL.map(|s| s.column());
        for (c, v) in cols.iter().zip(self.stage_means()) {
            let _ = write!(head, "{:>10}", format!("{c} [s]"));
            let _ = write!(row, "{v:>10.3}");
        }
        let _ = write!(head, "{TOTAL_COLUMN:>10}");
        let _ = write!(row, "{:>10.3}", self.seconds_per_keyframe);
        format!("{head}\n{row}\n")
    }
}

impl TimingReport {
    pub fn record_stage(&mut self, keyframe: u32, stage: Stage, seconds: f64) {
        self.frames.entry(keyframe).or_default().stages[stage as usize] += seconds;
    }

    pub fn record_overhead(&mut self, keyframe: u32, seconds: f64) {
        self.frames.entry(keyframe).or_default().overhead += seconds.max(0.0);
    }

    /// Stage sums of `keyframe` measured against the wall time of its step;
    /// whatever the stages do not account for becomes overhead.
    pub fn record_wall(&mut self, keyframe: u32, wall_seconds: f64) {
        let f = self.frames.entry(keyframe).or_default();
        let staged: f64 = f.stages.iter().sum();
        f.overhead = (wall_seconds - staged).max(0.0);
    }

    pub fn finalize(&self) -> TimingSummary {
        let n = self.frames.len();
        let denom = n.max(1) as f64;
        let mut means = [0.0; 4];
        let mut total = 0.0;
        for f in self.frames.values() {
            for (m, s) in means.iter_mut().zip(f.stages) {
                *m += s;
            }
            total += f.total();
        }
        let means = means.map(|m| m / denom);
        TimingSummary {
            keyframes: n,
            seg: means[0],
            map_track: means[1],
            preprocess: means[2],
            clip: means[3],
            seconds_per_keyframe: total / denom,
        }
    }
}
