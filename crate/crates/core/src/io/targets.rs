use std::path::Path;

use crate::descriptor::DescriptorTriple;
use crate::io::{put_f64, put_u32, read_file, to_u32, write_file, BinaryError, Bytes, IoError};
use crate::merger::TrainSample;
use crate::vector::UnitVector;

pub const TARGETS_MAGIC: &[u8; 4] = b"OVOT";
pub const TARGETS_VERSION: u32 = 1;

/// Merger training corpus. Layout:
///
/// ```text
/// "OVOT" | version u32 | count u32 | D u32
/// per sample: global, masked, bbox, target, each D x f64
/// ```
pub fn write_targets(samples: &[TrainSample]) -> Result<Vec<u8>, BinaryError> {
    let dim = samples.first().map_or(0, |s| s.target.dim());
    let mut out = Vec::with_capacity(16 + samples.len() * 32 * dim);
    out.extend_from_slice(TARGETS_MAGIC);
    put_u32(&mut out, TARGETS_VERSION);
    put_u32(&mut out, to_u32(samples.len(), "sample count")?);
    put_u32(&mut out, to_u32(dim, "dimension")?);
    for (i, s) in samples.iter().enumerate() {
        let vs = [&s.triple.global, &s.triple.masked, &s.triple.bbox, &s.target];
        if vs.iter().any(|v| v.dim() != dim) {
            return Err(BinaryError::Invalid(format!("sample {i}: mixed dimensions")));
        }
        for v in vs {
            for &x in v.iter() {
                put_f64(&mut out, x);
            }
        }
    }
    Ok(out)
}

pub fn read_targets(bytes: &[u8]) -> Result<Vec<TrainSample>, BinaryError> {
    let mut r = Bytes::new(bytes);
    r.header(TARGETS_MAGIC, TARGETS_VERSION)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim == 0 && count > 0 {
        return Err(BinaryError::Invalid("zero dimension".into()));
    }
    if count.saturating_mul(32 * dim) > bytes.len() {
        return Err(BinaryError::Truncated(bytes.len()));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut vs = Vec::with_capacity(4);
        for _ in 0..4 {
            let v = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            let n = crate::vector::norm(&v);
            if !(n.is_finite() && (n - 1.0).abs() < 1e-6) {
                return Err(BinaryError::Invalid(format!("sample {i}: vector norm {n}")));
            }
            vs.push(UnitVector::from_raw_unchecked(v));
        }
        let target = vs.pop().expect("four vectors");
        let bbox = vs.pop().expect("three vectors");
        let masked = vs.pop().expect("two vectors");
        let global = vs.pop().expect("one vector");
        let triple = DescriptorTriple::new(global, masked, bbox).map_err(|e| BinaryError::Invalid(e.to_string()))?;
        out.push(TrainSample { triple, target });
    }
    r.finish()?;
    Ok(out)
}

pub fn save_targets(path: &Path, samples: &[TrainSample]) -> Result<(), IoError> {
    let bytes = write_targets(samples).map_err(|e| IoError::format(path, e.to_string()))?;
    write_file(path, &bytes)
}

pub fn load_targets(path: &Path) -> Result<Vec<TrainSample>, IoError> {
    read_targets(&read_file(path)?).map_err(|e| IoError::format(path, e.to_string()))
}
