//! 3D segment mapper: matches each keyframe's 2D instance masks to map
//! segments by label mode voting, creates and updates segments, merges masks
//! matched to the same segment and labels newly covered points.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::geometry::{backproject_depth, project_points, GeometryConfig, Keyframe, ProjectedPoint, VoxelGrid};
use crate::map::{Label, MapError, ViewEntry, WorldMap, UNLABELED};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapperError {
    #[error("keyframe {0} was already processed")]
    KeyframeReplayed(u32),
    #[error("mask {mask_id} belongs to frame {mask_frame}, not keyframe {keyframe}")]
    FrameMismatch { mask_id: u32, mask_frame: u32, keyframe: u32 },
    #[error("mask {mask_id} is {actual} pixels, keyframe has {expected}")]
    MaskSize { mask_id: u32, expected: usize, actual: usize },
    #[error("empty mask {0}")]
    EmptyMask(u32),
    #[error("voxel grid size {grid} does not match configured {config}")]
    VoxelSize { grid: f64, config: f64 },
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Inclusive pixel bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub u_min: u32,
    pub v_min: u32,
    pub u_max: u32,
    pub v_max: u32,
}

impl BBox {
    pub fn union(&self, o: &BBox) -> BBox {
        BBox {
            u_min: self.u_min.min(o.u_min),
            v_min: self.v_min.min(o.v_min),
            u_max: self.u_max.max(o.u_max),
            v_max: self.v_max.max(o.v_max),
        }
    }

    pub fn width(&self) -> u32 {
        self.u_max - self.u_min + 1
    }

    pub fn height(&self) -> u32 {
        self.v_max - self.v_min + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mask2D {
    pub frame_index: u32,
    pub mask_id: u32,
    width: u32,
    height: u32,
    pixels: Vec<bool>,
    pixel_count: u32,
    bbox: BBox,
    pub matched_label: Label,
}

impl Mask2D {
    pub fn from_bitmap(frame_index: u32, mask_id: u32, width: u32, height: u32, pixels: Vec<bool>) -> Result<Self, MapperError> {
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(MapperError::MaskSize { mask_id, expected, actual: pixels.len() });
        }
        let mut count = 0u32;
        let mut bbox: Option<BBox> = None;
        for (i, _) in pixels.iter().enumerate().filter(|(_, &b)| b) {
            count += 1;
            let (u, v) = ((i % width as usize) as u32, (i / width as usize) as u32);
            let px = BBox { u_min: u, v_min: v, u_max: u, v_max: v };
            bbox = Some(bbox.map_or(px, |b| b.union(&px)));
        }
        let bbox = bbox.ok_or(MapperError::EmptyMask(mask_id))?;
        Ok(Self { frame_index, mask_id, width, height, pixels, pixel_count: count, bbox, matched_label: UNLABELED })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn pixel_count(&self) -> u32 {
        self.pixel_count
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        u < self.width && v < self.height && self.pixels[(v * self.width + u) as usize]
    }

    /// Bitmap and bbox union; counts are recomputed from the merged bitmap.
    fn absorb(&mut self, other: &Mask2D) {
        let mut count = 0;
        for (a, b) in self.pixels.iter_mut().zip(&other.pixels) {
            *a |= *b;
            count += *a as u32;
        }
        self.pixel_count = count;
        self.bbox = self.bbox.union(&other.bbox);
    }
}

/// One mask per distinct non-zero id of a row-major instance-id image,
/// ordered by id.
pub fn masks_from_id_image(frame_index: u32, width: u32, height: u32, ids: &[u16]) -> Result<Vec<Mask2D>, MapperError> {
    let n = width as usize * height as usize;
    if ids.len() != n {
        return Err(MapperError::MaskSize { mask_id: 0, expected: n, actual: ids.len() });
    }
    let mut bitmaps: BTreeMap<u16, Vec<bool>> = BTreeMap::new();
    for (i, &id) in ids.iter().enumerate() {
        if id != 0 {
            bitmaps.entry(id).or_insert_with(|| vec![false; n])[i] = true;
        }
    }
    bitmaps
        .into_iter()
        .map(|(id, bits)| Mask2D::from_bitmap(frame_index, id as u32, width, height, bits))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapperConfig {
    /// A mask is accepted iff its mode receives strictly more votes.
    pub epsilon: u32,
    pub heap_capacity: usize,
    /// Masks smaller than this never start a new segment.
    pub min_new_mask_pixels: u32,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self { epsilon: 5, heap_capacity: crate::map::DEFAULT_HEAP_CAPACITY, min_new_mask_pixels: 200 }
    }
}

/// Most frequent label among projected points falling inside `mask`, with
/// its count. Ties prefer a real label over `UNLABELED`, then the smaller
/// label. Returns `(UNLABELED, 0)` when no point falls inside.
pub fn label_mode_and_votes(projected: &[ProjectedPoint], mask: &Mask2D) -> (Label, u32) {
    let mut counts: HashMap<Label, u32> = HashMap::new();
    for p in projected {
        if mask.contains(p.pixel.0, p.pixel.1) {
            *counts.entry(p.label).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by_key(|&(label, n)| (n, label != UNLABELED, std::cmp::Reverse(label)))
        .unwrap_or((UNLABELED, 0))
}

/// Merges masks sharing a matched label; unmatched masks are dropped. Output
/// is ordered by label.
pub fn merge_2d_segments(masks: &[Mask2D]) -> Vec<Mask2D> {
    let mut by_label: BTreeMap<Label, Mask2D> = BTreeMap::new();
    for m in masks.iter().filter(|m| m.matched_label > UNLABELED) {
        match by_label.get_mut(&m.matched_label) {
            Some(acc) => acc.absorb(m),
            None => {
                by_label.insert(m.matched_label, m.clone());
            }
        }
    }
    by_label.into_values().collect()
}

/// A merged mask together with the label votes it collected.
#[derive(Clone, Debug, PartialEq)]
pub struct AcceptedMask {
    pub mask: Mask2D,
    pub votes: u32,
}

/// Labels every unlabeled projected point under an accepted mask. Masks are
/// applied in descending vote order (ties: lower label) and the first mask
/// to claim a point wins. Returns the number of points relabeled.
pub fn update_point_cloud_labels(map: &mut WorldMap, projected: &[ProjectedPoint], accepted: &[AcceptedMask]) -> usize {
    let mut order: Vec<&AcceptedMask> = accepted.iter().collect();
    order.sort_by_key(|a| (std::cmp::Reverse(a.votes), a.mask.matched_label));
    let mut relabeled = 0;
    for p in projected.iter().filter(|p| p.label == UNLABELED) {
        if let Some(a) = order.iter().find(|a| a.mask.contains(p.pixel.0, p.pixel.1)) {
            relabeled += map.label_point(p.point_index as usize, a.mask.matched_label) as usize;
        }
    }
    relabeled
}

/// Per-mask matching decision, in processing order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskMatch {
    pub mask_id: u32,
    pub mode: Label,
    pub votes: u32,
    /// Label assigned to the mask, or `UNLABELED` when discarded.
    pub label: Label,
    pub created: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MapperStats {
    pub new_points: usize,
    pub projected: usize,
    pub created: usize,
    pub updated_views: usize,
    pub discarded: usize,
    pub relabeled: usize,
    pub matches: Vec<MaskMatch>,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeOutcome {
    /// One mask per matched segment, ordered by label.
    pub accepted: Vec<AcceptedMask>,
    pub stats: MapperStats,
}

/// Stateful mapper driving [`process_keyframe`]; owns the voxel index that
/// mirrors the map's point cloud.
#[derive(Clone, Debug)]
pub struct SegmentMapper {
    pub config: MapperConfig,
    pub geometry: GeometryConfig,
    pub exec: Exec,
    grid: VoxelGrid,
}

impl SegmentMapper {
    pub fn new(config: MapperConfig, geometry: GeometryConfig, exec: Exec) -> Self {
        Self { config, geometry, exec, grid: VoxelGrid::new(geometry.voxel_size) }
    }

    /// Resumes mapping over an existing map.
    pub fn resume(config: MapperConfig, geometry: GeometryConfig, exec: Exec, map: &WorldMap) -> Self {
        Self { config, geometry, exec, grid: VoxelGrid::from_points(geometry.voxel_size, map.points()) }
    }

    pub fn process(&mut self, map: &mut WorldMap, kf: &Keyframe, masks: &[Mask2D]) -> Result<KeyframeOutcome, MapperError> {
        process_keyframe(map, &mut self.grid, kf, masks, &self.config, &self.geometry, self.exec)
    }
}

/// One mapping step. (a) fuses the keyframe's depth into the cloud as
/// unlabeled points; (b) projects the cloud into the keyframe; (c) votes a
/// label for each mask (largest masks first), creating a segment when the
/// mode is unlabeled; (d) merges masks per label and offers the merged pixel
/// count as the keyframe's view score; (e) labels covered unlabeled points.
///
/// Inputs are validated before any mutation, so an error leaves the map untouched.
pub fn process_keyframe(
    map: &mut WorldMap,
    grid: &mut VoxelGrid,
    kf: &Keyframe,
    masks: &[Mask2D],
    cfg: &MapperConfig,
    geo: &GeometryConfig,
    exec: Exec,
) -> Result<KeyframeOutcome, MapperError> {
    let start = Instant::now();
    if map.has_keyframe(kf.index) {
        return Err(MapperError::KeyframeReplayed(kf.index));
    }
    if grid.voxel_size() != geo.voxel_size {
        return Err(MapperError::VoxelSize { grid: grid.voxel_size(), config: geo.voxel_size });
    }
    let n = kf.intrinsics.pixel_count();
    for m in masks {
        if m.frame_index != kf.index {
            return Err(MapperError::FrameMismatch { mask_id: m.mask_id, mask_frame: m.frame_index, keyframe: kf.index });
        }
        if m.pixels.len() != n || m.width != kf.intrinsics.width {
            return Err(MapperError::MaskSize { mask_id: m.mask_id, expected: n, actual: m.pixels.len() });
        }
    }
    let mut stats = MapperStats::default();

    // (a)
    map.insert_pose(kf.index, kf.pose)?;
    let fresh = grid.fuse(&backproject_depth(kf, geo.stride, exec));
    stats.new_points = fresh.len();
    map.push_points(fresh);

    // (b)
    let projected = project_points(map.points(), kf, geo, exec);
    stats.projected = projected.len();

    // (c)
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(masks[i].pixel_count), masks[i].mask_id));
    let votes = exec.map(&order, |&i| label_mode_and_votes(&projected, &masks[i]));

    let mut labeled: Vec<Mask2D> = Vec::with_capacity(masks.len());
    let mut mask_votes: Vec<u32> = Vec::with_capacity(masks.len());
    for (&i, &(mode, v)) in order.iter().zip(&votes) {
        let mask = &masks[i];
        let mut decision = MaskMatch { mask_id: mask.mask_id, mode, votes: v, label: UNLABELED, created: false };
        if v > cfg.epsilon {
            if mode == UNLABELED {
                if mask.pixel_count >= cfg.min_new_mask_pixels {
                    decision.label = map.create_segment(kf.index, mask.pixel_count)?;
                    decision.created = true;
                    stats.created += 1;
                }
            } else {
                decision.label = mode;
            }
        }
        if decision.label == UNLABELED {
            stats.discarded += 1;
        } else {
            let mut m = mask.clone();
            m.matched_label = decision.label;
            labeled.push(m);
            mask_votes.push(v);
        }
        stats.matches.push(decision);
    }

    // (d)
    let merged = merge_2d_segments(&labeled);
    let mut accepted = Vec::with_capacity(merged.len());
    for mask in merged {
        let label = mask.matched_label;
        let votes: u32 = labeled.iter().zip(&mask_votes).filter(|(m, _)| m.matched_label == label).map(|(_, v)| v).sum();
        let created = stats.matches.iter().any(|d| d.created && d.label == label);
        if !created && map.offer_view(label, ViewEntry::new(kf.index, mask.pixel_count))? {
            stats.updated_views += 1;
        }
        accepted.push(AcceptedMask { mask, votes });
    }

    // (e)
    stats.relabeled = update_point_cloud_labels(map, &projected, &accepted);
    stats.elapsed = start.elapsed();
    Ok(KeyframeOutcome { accepted, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Pose};

    fn pp(u: u32, v: u32, label: Label, idx: u32) -> ProjectedPoint {
        ProjectedPoint { u: u as f64, v: v as f64, pixel: (u, v), depth_cam: 1.0, label, point_index: idx }
    }

    fn rect(frame: u32, id: u32, w: u32, h: u32, u0: u32, v0: u32, u1: u32, v1: u32) -> Mask2D {
        let bits = (0..w * h).map(|i| (u0..=u1).contains(&(i % w)) && (v0..=v1).contains(&(i / w))).collect();
        Mask2D::from_bitmap(frame, id, w, h, bits).unwrap()
    }

    #[test]
    fn mask_geometry() {
        let m = rect(0, 1, 10, 8, 2, 3, 5, 4);
        assert_eq!(m.pixel_count(), 8);
        assert_eq!(m.bbox(), BBox { u_min: 2, v_min: 3, u_max: 5, v_max: 4 });
        assert!(matches!(Mask2D::from_bitmap(0, 1, 2, 2, vec![false; 4]), Err(MapperError::EmptyMask(1))));
    }

    #[test]
    fn mode_examples() {
        let mask = rect(0, 1, 10, 10, 0, 0, 4, 4);
        let pts = [pp(0, 0, 3, 0), pp(1, 1, 3, 1), pp(2, 2, -1, 2), pp(3, 3, 2, 3), pp(9, 9, 2, 4)];
        assert_eq!(label_mode_and_votes(&pts, &mask), (3, 2));
        assert_eq!(label_mode_and_votes(&[pp(9, 9, 1, 0)], &mask), (UNLABELED, 0));
        let tie = [pp(0, 0, -1, 0), pp(0, 1, -1, 1), pp(1, 0, 5, 2), pp(1, 1, 5, 3)];
        assert_eq!(label_mode_and_votes(&tie, &mask), (5, 2));
        let tie2 = [pp(0, 0, 7, 0), pp(1, 0, 4, 1)];
        assert_eq!(label_mode_and_votes(&tie2, &mask), (4, 1));
    }

    #[test]
    fn merge_unions_bitmaps() {
        let mut a = rect(0, 1, 10, 10, 0, 0, 1, 1);
        let mut b = rect(0, 2, 10, 10, 5, 5, 6, 6);
        let mut c = rect(0, 3, 10, 10, 8, 0, 9, 0);
        let mut d = rect(0, 4, 10, 10, 3, 3, 3, 3);
        a.matched_label = 4;
        b.matched_label = 4;
        c.matched_label = 7;
        d.matched_label = UNLABELED;
        let out = merge_2d_segments(&[a.clone(), b.clone(), c.clone(), d]);
        assert_eq!(out.len(), 2);
        let m4 = &out[0];
        assert_eq!(m4.matched_label, 4);
        for (i, &bit) in m4.pixels().iter().enumerate() {
            assert_eq!(bit, a.pixels()[i] || b.pixels()[i]);
        }
        assert_eq!(m4.pixel_count(), 8);
        assert_eq!(m4.bbox(), BBox { u_min: 0, v_min: 0, u_max: 6, v_max: 6 });
        assert_eq!(out[1].pixels(), c.pixels());
        assert!(merge_2d_segments(&[]).is_empty());
    }

    #[test]
    fn relabel_priority_by_votes() {
        let mut map = WorldMap::default();
        map.push_points([[0.0; 3], [1.0; 3], [2.0; 3]]);
        map.create_segment(0, 10).unwrap();
        map.create_segment(0, 10).unwrap();
        let mut hi = rect(0, 1, 10, 10, 0, 0, 5, 5);
        hi.matched_label = 1;
        let mut lo = rect(0, 2, 10, 10, 0, 0, 9, 9);
        lo.matched_label = 0;
        let accepted = [AcceptedMask { mask: lo, votes: 4 }, AcceptedMask { mask: hi, votes: 10 }];
        let projected = [pp(2, 2, -1, 0), pp(8, 8, -1, 1)];
        assert_eq!(update_point_cloud_labels(&mut map, &projected, &accepted), 2);
        assert_eq!(map.points()[0].label, 1);
        assert_eq!(map.points()[1].label, 0);
        assert_eq!(map.points()[2].label, UNLABELED, "outside every mask");
        // nothing left to relabel
        let projected = [pp(2, 2, 1, 0), pp(8, 8, 0, 1)];
        assert_eq!(update_point_cloud_labels(&mut map, &projected, &accepted), 0);
    }

    /// Camera at the origin looking down +z at a fronto-parallel wall 2 m away.
    fn wall_frame(index: u32) -> Keyframe {
        let k = CameraIntrinsics { fx: 50.0, fy: 50.0, cx: 20.0, cy: 15.0, width: 40, height: 30, depth_scale: 1e-3 };
        Keyframe::new(index, k, Pose::identity(), vec![2.0; 1200], None).unwrap()
    }

    fn small_cfg() -> (MapperConfig, GeometryConfig) {
        (
            MapperConfig { epsilon: 5, heap_capacity: 10, min_new_mask_pixels: 20 },
            GeometryConfig { stride: 1, voxel_size: 0.01, ..Default::default() },
        )
    }

    #[test]
    fn first_keyframe_creates_segments_then_tracks() {
        let (cfg, geo) = small_cfg();
        let mut mapper = SegmentMapper::new(cfg, geo, Exec::Sequential);
        let mut map = WorldMap::default();
        let kf = wall_frame(0);
        // three disjoint column bands of decreasing size
        let masks = vec![rect(0, 1, 40, 30, 0, 0, 19, 29), rect(0, 2, 40, 30, 20, 0, 31, 29), rect(0, 3, 40, 30, 32, 0, 39, 29)];
        let out = mapper.process(&mut map, &kf, &masks).unwrap();
        assert_eq!(map.next_label(), 3);
        assert_eq!(out.stats.created, 3);
        assert_eq!(out.accepted.iter().map(|a| a.mask.mask_id).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(map.points().iter().all(|p| p.label >= 0));
        let band = |p: &crate::map::MapPoint| {
            let u = 50.0 * p.position[0] as f64 / 2.0 + 20.0;
            if u < 19.5 { 0 } else if u < 31.5 { 1 } else { 2 }
        };
        assert!(map.points().iter().all(|p| p.label == band(p)));

        // second keyframe at the same pose sees segment 0 with a larger mask
        let kf1 = wall_frame(1);
        let masks1 = vec![rect(1, 1, 40, 30, 0, 0, 24, 29)];
        let out1 = mapper.process(&mut map, &kf1, &masks1).unwrap();
        assert_eq!(out1.stats.created, 0);
        assert_eq!(map.next_label(), 3);
        let views: Vec<(u32, u32)> = map.segment(0).unwrap().views().entries().iter().map(|e| (e.keyframe, e.score)).collect();
        assert_eq!(views, vec![(1, 750), (0, 600)]);
        assert_eq!(out1.stats.new_points, 0, "identical geometry adds nothing");
    }

    #[test]
    fn votes_equal_to_epsilon_are_discarded() {
        let geo = GeometryConfig { stride: 1, voxel_size: 0.01, ..Default::default() };
        let cfg = MapperConfig { epsilon: 6, heap_capacity: 10, min_new_mask_pixels: 1 };
        let mut mapper = SegmentMapper::new(cfg, geo, Exec::Sequential);
        let mut map = WorldMap::default();
        // 2x3 = 6 pixels, each carrying one projected point
        let out = mapper.process(&mut map, &wall_frame(0), &[rect(0, 1, 40, 30, 0, 0, 1, 2)]).unwrap();
        assert_eq!(out.stats.matches[0].votes, 6);
        assert_eq!(out.stats.discarded, 1);
        assert!(out.accepted.is_empty());
        assert_eq!(map.next_label(), 0);
    }

    #[test]
    fn co_matched_masks_merge_and_score_sum() {
        let (cfg, geo) = small_cfg();
        let mut mapper = SegmentMapper::new(cfg, geo, Exec::Sequential);
        let mut map = WorldMap::default();
        mapper.process(&mut map, &wall_frame(0), &[rect(0, 1, 40, 30, 0, 0, 39, 29)]).unwrap();
        let masks = vec![rect(1, 1, 40, 30, 0, 0, 9, 29), rect(1, 2, 40, 30, 10, 0, 19, 29)];
        let out = mapper.process(&mut map, &wall_frame(1), &masks).unwrap();
        assert_eq!(out.accepted.len(), 1);
        assert_eq!(out.accepted[0].mask.pixel_count(), 600);
        assert_eq!(out.accepted[0].votes, 600);
        let seg = map.segment(0).unwrap();
        assert!(seg.views().entries().contains(&ViewEntry::new(1, 600)));
    }

    #[test]
    fn rejects_bad_input_without_side_effects() {
        let (cfg, geo) = small_cfg();
        let mut mapper = SegmentMapper::new(cfg, geo, Exec::Sequential);
        let mut map = WorldMap::default();
        let wrong = rect(3, 1, 40, 30, 0, 0, 5, 5);
        assert!(matches!(mapper.process(&mut map, &wall_frame(0), &[wrong]), Err(MapperError::FrameMismatch { .. })));
        assert_eq!(map, WorldMap::default());
        mapper.process(&mut map, &wall_frame(0), &[]).unwrap();
        let snapshot = map.clone();
        assert_eq!(mapper.process(&mut map, &wall_frame(0), &[]), Err(MapperError::KeyframeReplayed(0)));
        assert_eq!(map, snapshot);
    }

    #[test]
    fn id_image_decoding() {
        let ids = [0u16, 3, 3, 0, 7, 7];
        let masks = masks_from_id_image(2, 3, 2, &ids).unwrap();
        assert_eq!(masks.iter().map(|m| (m.mask_id, m.pixel_count())).collect::<Vec<_>>(), vec![(3, 2), (7, 2)]);
        assert!(masks_from_id_image(0, 3, 2, &[0; 6]).unwrap().is_empty());
    }

    #[test]
    fn tiny_new_masks_do_not_spawn_segments() {
        let (mut cfg, geo) = small_cfg();
        cfg.min_new_mask_pixels = 100;
        let mut mapper = SegmentMapper::new(cfg, geo, Exec::Sequential);
        let mut map = WorldMap::default();
        let out = mapper.process(&mut map, &wall_frame(0), &[rect(0, 1, 40, 30, 0, 0, 8, 8)]).unwrap();
        assert_eq!(out.stats.created, 0);
        assert_eq!(map.next_label(), 0);
    }
}
