use std::path::Path;

use crate::io::{put_f64, put_u32, read_file, to_u32, write_file, BinaryError, Bytes, IoError};
use crate::map::{Segment, ViewEntry, ViewHeap};
use crate::vector::UnitVector;

pub const SEGMENTS_MAGIC: &[u8; 4] = b"OVOS";
pub const SEGMENTS_VERSION: u32 = 1;

/// Layout:
///
/// ```text
/// "OVOS" | version u32 | count u32 | D u32 | heap capacity u32
/// per segment:
///   label u32 | flag u8 | D x f64 if flag = 1
///   views u32 | per view, best first: keyframe u32 | score u32 | flag u8 | D x f64 if flag = 1
/// ```
///
/// `D` is 0 when no segment or view carries a descriptor.
pub fn write_segments(segments: &[Segment], heap_capacity: usize) -> Result<Vec<u8>, BinaryError> {
    let dim = segments
        .iter()
        .flat_map(|s| s.descriptor().into_iter().chain(s.views().entries().iter().filter_map(|e| e.descriptor.as_ref())))
        .map(|d| d.dim())
        .next()
        .unwrap_or(0);
    let mut out = Vec::new();
    out.extend_from_slice(SEGMENTS_MAGIC);
    put_u32(&mut out, SEGMENTS_VERSION);
    put_u32(&mut out, to_u32(segments.len(), "segment count")?);
    put_u32(&mut out, to_u32(dim, "dimension")?);
    put_u32(&mut out, to_u32(heap_capacity, "heap capacity")?);
    let put_vec = |out: &mut Vec<u8>, d: Option<&UnitVector>| -> Result<(), BinaryError> {
        match d {
            None => out.push(0),
            Some(d) if d.dim() == dim => {
                out.push(1);
                for &x in d.iter() {
                    put_f64(out, x);
                }
            }
            Some(d) => return Err(BinaryError::Invalid(format!("descriptor of dimension {} in a {dim}-d map", d.dim()))),
        }
        Ok(())
    };
    for s in segments {
        let label = u32::try_from(s.label).map_err(|_| BinaryError::Invalid(format!("negative label {}", s.label)))?;
        put_u32(&mut out, label);
        put_vec(&mut out, s.descriptor())?;
        put_u32(&mut out, to_u32(s.views().len(), "view count")?);
        for e in s.views().entries() {
            put_u32(&mut out, e.keyframe);
            put_u32(&mut out, e.score);
            put_vec(&mut out, e.descriptor.as_ref())?;
        }
    }
    Ok(out)
}

/// Returns the segments and the heap capacity.
pub fn read_segments(bytes: &[u8]) -> Result<(Vec<Segment>, usize), BinaryError> {
    let mut r = Bytes::new(bytes);
    r.header(SEGMENTS_MAGIC, SEGMENTS_VERSION)?;
    let count = r.count(9)?;
    let dim = r.u32()? as usize;
    let capacity = r.u32()? as usize;
    if capacity == 0 {
        return Err(BinaryError::Invalid("zero heap capacity".into()));
    }
    let read_vec = |r: &mut Bytes| -> Result<Option<UnitVector>, BinaryError> {
        match r.u8()? {
            0 => Ok(None),
            1 if dim > 0 => {
                let v = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(BinaryError::Invalid("non-finite descriptor".into()));
                }
                Ok(Some(UnitVector::from_raw_unchecked(v)))
            }
            f => Err(BinaryError::Invalid(format!("descriptor flag {f}"))),
        }
    };
    let mut segments = Vec::with_capacity(count);
    for i in 0..count {
        let label = r.u32()?;
        if label as usize != i {
            return Err(BinaryError::Invalid(format!("segment {i} has label {label}")));
        }
        let descriptor = read_vec(&mut r)?;
        let n = r.count(9)?;
        if n > capacity {
            return Err(BinaryError::Invalid(format!("segment {i}: {n} views exceed capacity {capacity}")));
        }
        let mut views = Vec::with_capacity(n);
        for _ in 0..n {
            let keyframe = r.u32()?;
            let score = r.u32()?;
            let descriptor = read_vec(&mut r)?;
            views.push(ViewEntry { keyframe, score, descriptor });
        }
        let heap = rebuild_heap(capacity, views).map_err(|m| BinaryError::Invalid(format!("segment {i}: {m}")))?;
        segments.push(Segment::from_parts(label as i32, descriptor, heap));
    }
    r.finish()?;
    Ok((segments, capacity))
}

fn rebuild_heap(capacity: usize, views: Vec<ViewEntry>) -> Result<ViewHeap, String> {
    let mut heap = ViewHeap::new(capacity).map_err(|e| e.to_string())?;
    for v in &views {
        heap.offer(v.clone()).map_err(|e| e.to_string())?;
    }
    if heap.entries() != views.as_slice() {
        return Err("views are not unique and best-first".into());
    }
    Ok(heap)
}

pub fn save_segments(path: &Path, segments: &[Segment], heap_capacity: usize) -> Result<(), IoError> {
    let bytes = write_segments(segments, heap_capacity).map_err(|e| IoError::format(path, e.to_string()))?;
    write_file(path, &bytes)
}

pub fn load_segments(path: &Path) -> Result<(Vec<Segment>, usize), IoError> {
    read_segments(&read_file(path)?).map_err(|e| IoError::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::WorldMap;
    use proptest::prelude::*;

    fn uv(v: &[f64]) -> UnitVector {
        UnitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn empty_and_descriptor_less() {
        let bytes = write_segments(&[], 10).unwrap();
        assert_eq!(bytes.len(), 20);
        assert_eq!(read_segments(&bytes).unwrap(), (vec![], 10));

        let mut m = WorldMap::new(4).unwrap();
        m.create_segment(3, 50).unwrap();
        let bytes = write_segments(m.segments(), 4).unwrap();
        // header, label, flag 0, view count, (kf, score, flag 0)
        assert_eq!(bytes.len(), 20 + 4 + 1 + 4 + 9);
        assert_eq!(bytes[24], 0);
        assert_eq!(read_segments(&bytes).unwrap().0, m.segments());
    }

    #[test]
    fn corrupt_inputs() {
        let mut m = WorldMap::new(4).unwrap();
        m.create_segment(3, 50).unwrap();
        m.set_descriptor(0, 3, vec![1.0, 0.0]).unwrap();
        let good = write_segments(m.segments(), 4).unwrap();
        assert_eq!(read_segments(&good[..good.len() - 1]), Err(BinaryError::Truncated(good.len() - 8)));
        let mut extra = good.clone();
        extra.push(0);
        assert_eq!(read_segments(&extra), Err(BinaryError::Trailing(1)));
        let mut magic = good.clone();
        magic[0] = b'X';
        assert_eq!(read_segments(&magic), Err(BinaryError::Magic));
        let mut version = good;
        version[4] = 2;
        assert_eq!(read_segments(&version), Err(BinaryError::Version(2)));
    }

    proptest! {
        #[test]
        fn round_trip(
            ops in prop::collection::vec((0usize..6, 0u32..30, 1u32..500, prop::option::of(prop::array::uniform3(-1.0f64..1.0))), 1..80),
            cap in 1usize..6,
        ) {
            let mut m = WorldMap::new(cap).unwrap();
            for (seg, kf, score, d) in ops {
                if seg >= m.segments().len() {
                    m.create_segment(kf, score).unwrap();
                    continue;
                }
                m.offer_view(seg as i32, ViewEntry::new(kf, score)).unwrap();
                if let Some(d) = d {
                    if d.iter().map(|x| x * x).sum::<f64>() > 1e-3 {
                        m.set_descriptor(seg as i32, kf, d.to_vec()).unwrap();
                    }
                }
            }
            let bytes = write_segments(m.segments(), cap).unwrap();
            let (segs, c) = read_segments(&bytes).unwrap();
            prop_assert_eq!(c, cap);
            prop_assert_eq!(segs.as_slice(), m.segments());
            prop_assert_eq!(write_segments(&segs, c).unwrap(), bytes);
        }
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let mut m = WorldMap::new(4).unwrap();
        m.create_segment(0, 5).unwrap();
        m.create_segment(1, 5).unwrap();
        m.segment_mut(0).unwrap().set_descriptor(0, uv(&[1.0, 0.0]).to_vec()).unwrap();
        m.segment_mut(1).unwrap().set_descriptor(1, uv(&[1.0, 0.0, 0.0]).to_vec()).unwrap();
        assert!(write_segments(m.segments(), 4).is_err());
    }
}
