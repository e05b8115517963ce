use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::map::{Label, WorldMap};
use crate::synth::SceneLayout;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceCoverage {
    pub instance: u16,
    pub points: usize,
    /// Segment with the highest IoU against this instance, if any overlaps.
    pub best_segment: Option<Label>,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentPurity {
    pub label: Label,
    pub points: usize,
    pub majority_instance: u16,
    pub purity: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub coverage: Vec<InstanceCoverage>,
    /// Segments that own no points are left out.
    pub purity: Vec<SegmentPurity>,
}

impl TrackingMetrics {
    pub fn min_coverage(&self) -> f64 {
        self.coverage.iter().map(|c| c.iou).fold(f64::INFINITY, f64::min)
    }

    pub fn min_purity(&self) -> f64 {
        self.purity.iter().map(|p| p.purity).fold(f64::INFINITY, f64::min)
    }
}

/// Ground-truth instance of every map point.
pub fn point_instances(map: &WorldMap, scene: &SceneLayout) -> Vec<u16> {
    map.points()
        .iter()
        .map(|p| scene.nearest_instance(&[p.position[0] as f64, p.position[1] as f64, p.position[2] as f64]))
        .collect()
}

/// Coverage IoU per scene instance (rows in instance order) and purity per
/// non-empty segment (label order). Instances that own no map points get
/// IoU 0. Ties between equally good segments go to the lower label.
pub fn oracle_tracking_metrics(map: &WorldMap, scene: &SceneLayout) -> TrackingMetrics {
    let gt = point_instances(map, scene);
    let mut joint: BTreeMap<(u16, Label), usize> = BTreeMap::new();
    let mut per_instance: BTreeMap<u16, usize> = scene.boxes.iter().map(|b| (b.instance, 0)).collect();
    let mut per_segment: BTreeMap<Label, usize> = BTreeMap::new();
    for (p, &g) in map.points().iter().zip(&gt) {
        *per_instance.entry(g).or_default() += 1;
        if p.label >= 0 {
            *per_segment.entry(p.label).or_default() += 1;
            *joint.entry((g, p.label)).or_default() += 1;
        }
    }

    let coverage = per_instance
        .iter()
        .map(|(&instance, &n)| {
            let mut best: (f64, Option<Label>) = (0.0, None);
            for (&(g, label), &inter) in joint.range((instance, Label::MIN)..=(instance, Label::MAX)) {
                debug_assert_eq!(g, instance);
                let union = n + per_segment[&label] - inter;
                let iou = inter as f64 / union as f64;
                if iou > best.0 {
                    best = (iou, Some(label));
                }
            }
            InstanceCoverage { instance, points: n, best_segment: best.1, iou: best.0 }
        })
        .collect();

    let mut by_segment: BTreeMap<Label, (u16, usize)> = BTreeMap::new();
    for (&(g, label), &c) in &joint {
        let e = by_segment.entry(label).or_insert((g, 0));
        if c > e.1 {
            *e = (g, c);
        }
    }
    let purity = by_segment
        .into_iter()
        .map(|(label, (majority_instance, c))| {
            let points = per_segment[&label];
            SegmentPurity { label, points, majority_instance, purity: c as f64 / points as f64 }
        })
        .collect();
    TrackingMetrics { coverage, purity }
}

/// Ground-truth vertices on every surface facing the room interior, spaced
/// `spacing` apart, with their class ids. Faces buried inside another box
/// or outside the room are skipped.
pub fn ground_truth_vertices(scene: &SceneLayout, spacing: f64) -> (Vec<[f64; 3]>, Vec<i32>) {
    let (lo, hi) = (scene.room_min, scene.room_max);
    let eps = 1e-9;
    let inside_room = |p: &[f64; 3]| (0..3).all(|a| p[a] >= lo[a] - eps && p[a] <= hi[a] + eps);
    let mut verts = Vec::new();
    let mut labels = Vec::new();
    for b in &scene.boxes {
        for axis in 0..3 {
            for side in [b.min[axis], b.max[axis]] {
                let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                let n1 = ((b.max[a1] - b.min[a1]) / spacing).ceil().max(1.0) as usize;
                let n2 = ((b.max[a2] - b.min[a2]) / spacing).ceil().max(1.0) as usize;
                for i in 0..n1 {
                    for j in 0..n2 {
                        let mut p = [0.0; 3];
                        p[axis] = side;
                        p[a1] = b.min[a1] + (i as f64 + 0.5) * (b.max[a1] - b.min[a1]) / n1 as f64;
                        p[a2] = b.min[a2] + (j as f64 + 0.5) * (b.max[a2] - b.min[a2]) / n2 as f64;
                        if !inside_room(&p) {
                            continue;
                        }
                        let buried = scene.boxes.iter().any(|o| o.instance != b.instance && o.sdf(&p) < eps);
                        if !buried {
                            verts.push(p);
                            labels.push(b.class as i32);
                        }
                    }
                }
            }
        }
    }
    (verts, labels)
}
