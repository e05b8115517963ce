use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{Keyframe, RgbImage};
use crate::mapper::Mask2D;
use crate::vector::{UnitVector, VectorError};

/// Which image region a descriptor was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegionKind {
    /// The whole keyframe.
    Full = 0,
    /// Mask bounding box with everything outside the mask blacked out.
    Masked = 1,
    /// Mask bounding box, background kept.
    Bbox = 2,
}

impl RegionKind {
    pub const ALL: [RegionKind; 3] = [RegionKind::Full, RegionKind::Masked, RegionKind::Bbox];

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Full),
            1 => Some(Self::Masked),
            2 => Some(Self::Bbox),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("no {kind:?} embedding for mask {mask_id} in frame {frame}")]
    Missing { frame: u32, mask_id: u32, kind: RegionKind },
    #[error("embedding for mask {mask_id}: {source}")]
    Vector { mask_id: u32, source: VectorError },
    #[error("embedder failure: {0}")]
    Provider(String),
}

/// Per-frame descriptor records keyed by `(mask_id, kind)`. The frame-level
/// full-image record uses mask id 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub records: BTreeMap<(u32, RegionKind), Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, records: BTreeMap::new() }
    }

    pub fn insert(&mut self, mask_id: u32, kind: RegionKind, v: Vec<f32>) {
        debug_assert_eq!(v.len(), self.dim);
        self.records.insert((mask_id, kind), v);
    }

    pub fn get(&self, mask_id: u32, kind: RegionKind) -> Option<&[f32]> {
        let hit = self.records.get(&(mask_id, kind));
        let hit = match kind {
            RegionKind::Full => hit.or_else(|| self.records.get(&(0, RegionKind::Full))),
            _ => hit,
        };
        hit.map(Vec::as_slice)
    }
}

/// Everything the descriptor stage needs from one keyframe.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameData {
    pub keyframe: Keyframe,
    pub embeddings: Option<EmbeddingTable>,
}

#[derive(Clone, Copy, Debug)]
pub struct RegionRequest<'a> {
    pub frame_index: u32,
    pub kind: RegionKind,
    /// 0 for the full-frame request.
    pub mask_id: u32,
    /// Cropped pixels when the keyframe carries color.
    pub image: Option<&'a RgbImage>,
}

/// Source of raw embedding vectors for image regions.
pub trait Embedder: Send + Sync {
    fn embed(&self, frame: &FrameData, request: &RegionRequest<'_>) -> Result<Vec<f64>, EmbedError>;
}

/// Serves precomputed vectors from the frame's [`EmbeddingTable`].
#[derive(Clone, Copy, Debug, Default)]
pub struct TableEmbedder;

impl Embedder for TableEmbedder {
    fn embed(&self, frame: &FrameData, req: &RegionRequest<'_>) -> Result<Vec<f64>, EmbedError> {
        let missing = EmbedError::Missing { frame: req.frame_index, mask_id: req.mask_id, kind: req.kind };
        let table = frame.embeddings.as_ref().ok_or(missing.clone())?;
        let v = table.get(req.mask_id, req.kind).ok_or(missing)?;
        Ok(v.iter().map(|&x| x as f64).collect())
    }
}

/// Full frame, masked crop and bounding-box crop descriptors of one mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorTriple {
    pub global: UnitVector,
    pub masked: UnitVector,
    pub bbox: UnitVector,
}

impl DescriptorTriple {
    pub fn new(global: UnitVector, masked: UnitVector, bbox: UnitVector) -> Result<Self, VectorError> {
        let d = global.dim();
        for v in [&masked, &bbox] {
            if v.dim() != d {
                return Err(VectorError::Dimension { expected: d, actual: v.dim() });
            }
        }
        Ok(Self { global, masked, bbox })
    }

    pub fn dim(&self) -> usize {
        self.global.dim()
    }

    /// Token order used by the merger network.
    pub fn tokens(&self) -> [&UnitVector; 3] {
        [&self.global, &self.masked, &self.bbox]
    }
}

/// Cut `kind`'s region out of `rgb`. Masked crops fill non-mask pixels with black.
pub fn crop_region(rgb: &RgbImage, mask: &Mask2D, kind: RegionKind) -> RgbImage {
    if kind == RegionKind::Full {
        return rgb.clone();
    }
    let b = mask.bbox();
    let mut data = Vec::with_capacity((b.width() * b.height()) as usize);
    for v in b.v_min..=b.v_max {
        for u in b.u_min..=b.u_max {
            let px = rgb.data[(v * rgb.width + u) as usize];
            let keep = kind == RegionKind::Bbox || mask.contains(u, v);
            data.push(if keep { px } else { [0, 0, 0] });
        }
    }
    RgbImage { width: b.width(), height: b.height(), data }
}

/// The masked and bbox crops of `mask`, when the frame has color.
pub fn build_crops(frame: &FrameData, mask: &Mask2D) -> Option<[RgbImage; 2]> {
    let rgb = frame.keyframe.rgb.as_ref()?;
    Some([crop_region(rgb, mask, RegionKind::Masked), crop_region(rgb, mask, RegionKind::Bbox)])
}

pub fn embed_triple(
    frame: &FrameData,
    mask: &Mask2D,
    crops: Option<&[RgbImage; 2]>,
    embedder: &dyn Embedder,
) -> Result<DescriptorTriple, EmbedError> {
    let fi = frame.keyframe.index;
    let request = |kind, mask_id, image| RegionRequest { frame_index: fi, kind, mask_id, image };
    let unit = |v: Vec<f64>| UnitVector::new(v).map_err(|source| EmbedError::Vector { mask_id: mask.mask_id, source });
    let global = unit(embedder.embed(frame, &request(RegionKind::Full, 0, frame.keyframe.rgb.as_ref()))?)?;
    let masked = unit(embedder.embed(frame, &request(RegionKind::Masked, mask.mask_id, crops.map(|c| &c[0])))?)?;
    let bbox = unit(embedder.embed(frame, &request(RegionKind::Bbox, mask.mask_id, crops.map(|c| &c[1])))?)?;
    DescriptorTriple::new(global, masked, bbox).map_err(|source| EmbedError::Vector { mask_id: mask.mask_id, source })
}

/// Crops and embeds the three regions of `mask`.
pub fn assemble_triple(frame: &FrameData, mask: &Mask2D, embedder: &dyn Embedder) -> Result<DescriptorTriple, EmbedError> {
    let crops = build_crops(frame, mask);
    embed_triple(frame, mask, crops.as_ref(), embedder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Pose};
    use std::sync::Mutex;

    fn frame(rgb: bool) -> FrameData {
        let k = CameraIntrinsics { fx: 10.0, fy: 10.0, cx: 2.0, cy: 1.5, width: 4, height: 3, depth_scale: 1e-3 };
        let img = RgbImage { width: 4, height: 3, data: (0..12).map(|i| [i as u8 + 1, 0, 0]).collect() };
        let kf = Keyframe::new(5, k, Pose::identity(), vec![1.0; 12], rgb.then_some(img)).unwrap();
        let mut t = EmbeddingTable::new(2);
        t.insert(0, RegionKind::Full, vec![1.0, 0.0]);
        t.insert(9, RegionKind::Masked, vec![0.0, 3.0]);
        t.insert(9, RegionKind::Bbox, vec![1.0, 1.0]);
        FrameData { keyframe: kf, embeddings: Some(t) }
    }

    fn mask(bits: [bool; 12]) -> Mask2D {
        Mask2D::from_bitmap(5, 9, 4, 3, bits.to_vec()).unwrap()
    }

    type Calls = Mutex<Vec<(RegionKind, Option<(u32, u32)>)>>;

    /// Records the crop sizes it is asked about and returns a per-kind axis.
    struct Recorder(Calls);

    impl Embedder for Recorder {
        fn embed(&self, _: &FrameData, req: &RegionRequest<'_>) -> Result<Vec<f64>, EmbedError> {
            self.0.lock().unwrap().push((req.kind, req.image.map(|i| (i.width, i.height))));
            let mut v = vec![0.0; 3];
            v[req.kind as usize] = 1.0;
            Ok(v)
        }
    }

    #[test]
    fn table_passthrough() {
        let f = frame(false);
        let m = mask([false, true, true, false, false, true, false, false, false, false, false, false]);
        let t = assemble_triple(&f, &m, &TableEmbedder).unwrap();
        assert_eq!(t.global.as_slice(), &[1.0, 0.0]);
        assert_eq!(t.masked.as_slice(), &[0.0, 1.0]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((t.bbox[0] - s).abs() < 1e-15 && (t.bbox[1] - s).abs() < 1e-15);
    }

    #[test]
    fn missing_record_is_an_error() {
        let f = frame(false);
        let mut m = mask([true; 12]);
        m.mask_id = 4;
        assert!(matches!(assemble_triple(&f, &m, &TableEmbedder), Err(EmbedError::Missing { mask_id: 4, .. })));
    }

    #[test]
    fn crops_cover_bbox_and_black_out_background() {
        let f = frame(true);
        let m = mask([false, true, true, false, false, true, false, false, false, false, false, false]);
        let rgb = f.keyframe.rgb.as_ref().unwrap();
        let masked = crop_region(rgb, &m, RegionKind::Masked);
        assert_eq!((masked.width, masked.height), (2, 2));
        assert_eq!(masked.data, vec![[2, 0, 0], [3, 0, 0], [6, 0, 0], [0, 0, 0]]);
        let bbox = crop_region(rgb, &m, RegionKind::Bbox);
        assert_eq!(bbox.data, vec![[2, 0, 0], [3, 0, 0], [6, 0, 0], [7, 0, 0]]);
    }

    #[test]
    fn full_frame_mask_requests_full_bounds() {
        let f = frame(true);
        let rec = Recorder(Mutex::new(Vec::new()));
        let t = assemble_triple(&f, &mask([true; 12]), &rec).unwrap();
        assert_eq!(
            *rec.0.lock().unwrap(),
            vec![(RegionKind::Full, Some((4, 3))), (RegionKind::Masked, Some((4, 3))), (RegionKind::Bbox, Some((4, 3)))]
        );
        assert_eq!(t.masked.as_slice(), &[0.0, 1.0, 0.0]);
    }
}
