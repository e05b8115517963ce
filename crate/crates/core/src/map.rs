//! Persistent map state: keyframe poses, the labeled point cloud and the set
//! of tracked segments with their best-view heaps.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::descriptor::medoid_index;
use crate::geometry::Pose;
use crate::vector::{UnitVector, VectorError};

/// Point label; `UNLABELED` or the label of an existing segment.
pub type Label = i32;
pub const UNLABELED: Label = -1;

/// Default number of best views kept per segment.
pub const DEFAULT_HEAP_CAPACITY: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("visibility score must be positive")]
    ZeroScore,
    #[error("heap capacity must be at least 1")]
    ZeroCapacity,
    #[error("unknown segment label {0}")]
    UnknownLabel(Label),
    #[error("keyframe {0} already has a pose")]
    DuplicateKeyframe(u32),
    #[error("descriptor has dimension {actual}, map uses {expected}")]
    DescriptorDim { expected: usize, actual: usize },
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapPoint {
    pub position: [f32; 3],
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewEntry {
    pub keyframe: u32,
    /// Pixel count of the matched 2D mask.
    pub score: u32,
    pub descriptor: Option<UnitVector>,
}

impl ViewEntry {
    pub fn new(keyframe: u32, score: u32) -> Self {
        Self { keyframe, score, descriptor: None }
    }

    /// Strict "better view" order: higher score, then lower keyframe index.
    fn ranks_above(&self, other: &ViewEntry) -> bool {
        (self.score, std::cmp::Reverse(self.keyframe)) > (other.score, std::cmp::Reverse(other.keyframe))
    }
}

/// Outcome of offering a view to a full or partially full heap.
#[derive(Clone, Debug, PartialEq)]
pub enum Offer {
    Rejected,
    Inserted,
    /// Inserted, pushing out the returned entry.
    Evicted(ViewEntry),
    /// Same keyframe already present with a lower score; it was replaced.
    Replaced(ViewEntry),
}

impl Offer {
    pub fn accepted(&self) -> bool {
        !matches!(self, Offer::Rejected)
    }
}

/// Bounded max-heap of views keyed by visibility score.
///
/// Capacities are small (10 by default), so entries are kept in a vector
/// sorted best-first, which also makes iteration order deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewHeap {
    capacity: usize,
    entries: Vec<ViewEntry>,
}

impl ViewHeap {
    pub fn new(capacity: usize) -> Result<Self, MapError> {
        if capacity == 0 {
            return Err(MapError::ZeroCapacity);
        }
        Ok(Self { capacity, entries: Vec::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries best-first.
    pub fn entries(&self) -> &[ViewEntry] {
        &self.entries
    }

    pub fn contains(&self, keyframe: u32) -> bool {
        self.entries.iter().any(|e| e.keyframe == keyframe)
    }

    pub fn get_mut(&mut self, keyframe: u32) -> Option<&mut ViewEntry> {
        self.entries.iter_mut().find(|e| e.keyframe == keyframe)
    }

    pub fn offer(&mut self, entry: ViewEntry) -> Result<Offer, MapError> {
        if entry.score == 0 {
            return Err(MapError::ZeroScore);
        }
        if let Some(pos) = self.entries.iter().position(|e| e.keyframe == entry.keyframe) {
            if entry.score <= self.entries[pos].score {
                return Ok(Offer::Rejected);
            }
            let old = self.entries.remove(pos);
            self.insert_sorted(entry);
            return Ok(Offer::Replaced(old));
        }
        if self.entries.len() < self.capacity {
            self.insert_sorted(entry);
            return Ok(Offer::Inserted);
        }
        let worst = self.entries.last().expect("capacity >= 1");
        if !entry.ranks_above(worst) {
            return Ok(Offer::Rejected);
        }
        let evicted = self.entries.pop().expect("non-empty");
        self.insert_sorted(entry);
        Ok(Offer::Evicted(evicted))
    }

    fn insert_sorted(&mut self, entry: ViewEntry) {
        let pos = self.entries.iter().position(|e| entry.ranks_above(e)).unwrap_or(self.entries.len());
        self.entries.insert(pos, entry);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub label: Label,
    descriptor: Option<UnitVector>,
    views: ViewHeap,
}

impl Segment {
    pub fn new(label: Label, first_view: ViewEntry, capacity: usize) -> Result<Self, MapError> {
        let mut views = ViewHeap::new(capacity)?;
        views.offer(first_view)?;
        Ok(Self { label, descriptor: None, views })
    }

    /// Rebuilds a segment from persisted parts.
    pub fn from_parts(label: Label, descriptor: Option<UnitVector>, views: ViewHeap) -> Self {
        Self { label, descriptor, views }
    }

    pub fn descriptor(&self) -> Option<&UnitVector> {
        self.descriptor.as_ref()
    }

    pub fn views(&self) -> &ViewHeap {
        &self.views
    }

    /// Offers a view; returns whether it was stored. Evicted or replaced views
    /// take their descriptors with them and the segment descriptor is
    /// recomputed.
    pub fn offer_view(&mut self, entry: ViewEntry) -> Result<bool, MapError> {
        let outcome = self.views.offer(entry)?;
        if let Offer::Evicted(old) | Offer::Replaced(old) = &outcome {
            if old.descriptor.is_some() {
                self.refresh_descriptor();
            }
        }
        Ok(outcome.accepted())
    }

    /// Stores `d` (normalized) on the view of `keyframe` and recomputes the
    /// segment descriptor. Returns `false` when the keyframe is no longer in
    /// the heap.
    pub fn set_descriptor(&mut self, keyframe: u32, d: Vec<f64>) -> Result<bool, MapError> {
        let d = UnitVector::new(d)?;
        let Some(view) = self.views.get_mut(keyframe) else {
            return Ok(false);
        };
        view.descriptor = Some(d);
        self.refresh_descriptor();
        Ok(true)
    }

    /// Segment descriptor := medoid of the descriptors currently held by its
    /// views, or none when no view carries one.
    pub fn refresh_descriptor(&mut self) {
        let pool: Vec<(u32, &UnitVector)> = self
            .views
            .entries()
            .iter()
            .filter_map(|e| e.descriptor.as_ref().map(|d| (e.keyframe, d)))
            .collect();
        self.descriptor = medoid_index(&pool).ok().map(|i| pool[i].1.clone());
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldMap {
    heap_capacity: usize,
    poses: BTreeMap<u32, Pose>,
    points: Vec<MapPoint>,
    segments: Vec<Segment>,
}

impl Default for WorldMap {
    fn default() -> Self {
        Self::new(DEFAULT_HEAP_CAPACITY).expect("non-zero capacity")
    }
}

impl WorldMap {
    pub fn new(heap_capacity: usize) -> Result<Self, MapError> {
        if heap_capacity == 0 {
            return Err(MapError::ZeroCapacity);
        }
        Ok(Self { heap_capacity, poses: BTreeMap::new(), points: Vec::new(), segments: Vec::new() })
    }

    /// Rebuilds a map from persisted parts. Segment `i` must carry label `i`.
    pub fn from_parts(
        heap_capacity: usize,
        poses: BTreeMap<u32, Pose>,
        points: Vec<MapPoint>,
        segments: Vec<Segment>,
    ) -> Result<Self, MapError> {
        if heap_capacity == 0 {
            return Err(MapError::ZeroCapacity);
        }
        for (i, s) in segments.iter().enumerate() {
            if s.label != i as Label {
                return Err(MapError::UnknownLabel(s.label));
            }
        }
        let n = segments.len() as Label;
        if let Some(p) = points.iter().find(|p| p.label < UNLABELED || p.label >= n) {
            return Err(MapError::UnknownLabel(p.label));
        }
        Ok(Self { heap_capacity, poses, points, segments })
    }

    pub fn heap_capacity(&self) -> usize {
        self.heap_capacity
    }

    pub fn next_label(&self) -> Label {
        self.segments.len() as Label
    }

    pub fn poses(&self) -> &BTreeMap<u32, Pose> {
        &self.poses
    }

    pub fn points(&self) -> &[MapPoint] {
        &self.points
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, label: Label) -> Option<&Segment> {
        usize::try_from(label).ok().and_then(|i| self.segments.get(i))
    }

    pub fn segment_mut(&mut self, label: Label) -> Result<&mut Segment, MapError> {
        usize::try_from(label)
            .ok()
            .and_then(|i| self.segments.get_mut(i))
            .ok_or(MapError::UnknownLabel(label))
    }

    pub fn has_keyframe(&self, index: u32) -> bool {
        self.poses.contains_key(&index)
    }

    pub fn insert_pose(&mut self, index: u32, pose: Pose) -> Result<(), MapError> {
        if self.poses.contains_key(&index) {
            return Err(MapError::DuplicateKeyframe(index));
        }
        self.poses.insert(index, pose);
        Ok(())
    }

    pub(crate) fn push_points(&mut self, positions: impl IntoIterator<Item = [f32; 3]>) {
        self.points.extend(positions.into_iter().map(|position| MapPoint { position, label: UNLABELED }));
    }

    /// Assigns `label` to an unlabeled point. Labeled points are never
    /// overwritten; returns whether the point changed.
    pub(crate) fn label_point(&mut self, index: usize, label: Label) -> bool {
        let p = &mut self.points[index];
        if p.label != UNLABELED {
            return false;
        }
        p.label = label;
        true
    }

    /// Allocates the next label with a single initial view.
    pub fn create_segment(&mut self, keyframe: u32, score: u32) -> Result<Label, MapError> {
        if score == 0 {
            return Err(MapError::ZeroScore);
        }
        let label = self.next_label();
        self.segments.push(Segment::new(label, ViewEntry::new(keyframe, score), self.heap_capacity)?);
        Ok(label)
    }

    pub fn offer_view(&mut self, label: Label, entry: ViewEntry) -> Result<bool, MapError> {
        self.segment_mut(label)?.offer_view(entry)
    }

    pub fn set_descriptor(&mut self, label: Label, keyframe: u32, d: Vec<f64>) -> Result<bool, MapError> {
        if let Some(expected) = self.descriptor_dim() {
            if expected != d.len() {
                return Err(MapError::DescriptorDim { expected, actual: d.len() });
            }
        }
        self.segment_mut(label)?.set_descriptor(keyframe, d)
    }

    /// Dimension of the first stored descriptor, if any.
    pub fn descriptor_dim(&self) -> Option<usize> {
        self.segments.iter().find_map(|s| {
            s.descriptor().map(|d| d.dim()).or_else(|| {
                s.views().entries().iter().find_map(|e| e.descriptor.as_ref().map(|d| d.dim()))
            })
        })
    }
}
