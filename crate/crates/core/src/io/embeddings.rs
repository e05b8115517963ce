use std::path::Path;

use crate::descriptor::{EmbeddingTable, RegionKind};
use crate::io::{put_f32, put_u32, read_file, to_u32, write_file, BinaryError, Bytes, IoError};

pub const EMBEDDINGS_MAGIC: &[u8; 4] = b"OVOE";
pub const EMBEDDINGS_VERSION: u32 = 1;

/// Layout:
///
/// ```text
/// "OVOE" | version u32 | count u32 | D u32
/// per record: mask_id u32 | kind u8 (0 full, 1 masked, 2 bbox) | D x f32
/// ```
///
/// Records are written in `(mask_id, kind)` order.
pub fn write_embeddings(table: &EmbeddingTable) -> Result<Vec<u8>, BinaryError> {
    let mut out = Vec::with_capacity(16 + table.records.len() * (5 + 4 * table.dim));
    out.extend_from_slice(EMBEDDINGS_MAGIC);
    put_u32(&mut out, EMBEDDINGS_VERSION);
    put_u32(&mut out, to_u32(table.records.len(), "record count")?);
    put_u32(&mut out, to_u32(table.dim, "dimension")?);
    for (&(mask_id, kind), v) in &table.records {
        if v.len() != table.dim {
            return Err(BinaryError::Invalid(format!("mask {mask_id}: {} values, expected {}", v.len(), table.dim)));
        }
        put_u32(&mut out, mask_id);
        out.push(kind as u8);
        for &x in v {
            put_f32(&mut out, x);
        }
    }
    Ok(out)
}

pub fn read_embeddings(bytes: &[u8]) -> Result<EmbeddingTable, BinaryError> {
    let mut r = Bytes::new(bytes);
    r.header(EMBEDDINGS_MAGIC, EMBEDDINGS_VERSION)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let record = 5 + 4 * dim;
    if count.saturating_mul(record) > bytes.len() {
        return Err(BinaryError::Truncated(bytes.len()));
    }
    let mut table = EmbeddingTable::new(dim);
    for _ in 0..count {
        let mask_id = r.u32()?;
        let k = r.u8()?;
        let kind = RegionKind::from_u8(k).ok_or_else(|| BinaryError::Invalid(format!("region kind {k}")))?;
        let v = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
        if table.records.insert((mask_id, kind), v).is_some() {
            return Err(BinaryError::Invalid(format!("duplicate record ({mask_id}, {kind:?})")));
        }
    }
    r.finish()?;
    Ok(table)
}

pub fn save_embeddings(path: &Path, table: &EmbeddingTable) -> Result<(), IoError> {
    let bytes = write_embeddings(table).map_err(|e| IoError::format(path, e.to_string()))?;
    write_file(path, &bytes)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, IoError> {
    read_embeddings(&read_file(path)?).map_err(|e| IoError::format(path, e.to_string()))
}
