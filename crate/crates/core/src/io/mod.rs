//! On-disk formats: point clouds, segments, embeddings, training corpora,
//! image-based sequences, map directories and pipeline configuration.
//!
//! All binary containers are little-endian and start with a 4-byte magic
//! followed by a `u32` version. Readers reject unknown versions, short
//! files and trailing bytes.

mod config;
mod embeddings;
mod images;
mod mapdir;
mod ply;
mod poses;
mod segments;
mod sequence;
mod targets;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{FusionConfig, PipelineConfig};
pub use embeddings::{load_embeddings, read_embeddings, save_embeddings, write_embeddings, EMBEDDINGS_MAGIC, EMBEDDINGS_VERSION};
pub use images::{load_depth, load_mask_ids, load_rgb, save_depth, save_mask_ids, save_rgb};
pub use mapdir::{load_map, load_timing, save_map, save_timing, POINTS_FILE, POSES_FILE, SEGMENTS_FILE, TIMING_FILE};
pub use ply::{load_ply, read_ply, save_ply, write_ply};
pub use poses::{load_poses, read_poses, save_poses, write_poses};
pub use segments::{load_segments, read_segments, save_segments, write_segments, SEGMENTS_MAGIC, SEGMENTS_VERSION};
pub use sequence::{
    load_sequence, write_synthetic_sequence, FrameRecord, LoadedFrame, SequenceFrames, SequenceManifest, CLASSES_FILE,
    DEFAULT_KEYFRAME_STRIDE, GT_FILE, MANIFEST_FILE,
};
pub use targets::{load_targets, read_targets, save_targets, write_targets, TARGETS_MAGIC, TARGETS_VERSION};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("frame {frame}: {source}")]
    Frame { frame: u32, source: Box<IoError> },
}

impl IoError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format { path: path.to_path_buf(), message: message.into() }
    }

    pub fn in_frame(self, frame: u32) -> Self {
        IoError::Frame { frame, source: Box::new(self) }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|e| IoError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

/// Little-endian cursor over a byte buffer; every read reports truncation.
pub(crate) struct Bytes<'a> {
    buf: &'a [u8],
    pos: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BinaryError {
    #[error("bad magic")]
    Magic,
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("{0}")]
    Invalid(String),
}

impl<'a> Bytes<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<(), BinaryError> {
        if self.take(4)? != magic {
            return Err(BinaryError::Magic);
        }
        match self.u32()? {
            v if v == version => Ok(()),
            v => Err(BinaryError::Version(v)),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], BinaryError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(BinaryError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, BinaryError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, BinaryError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f32(&mut self) -> Result<f32, BinaryError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, BinaryError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Counts larger than the remaining bytes could hold are corrupt; this
    /// keeps allocation bounded by the input size.
    pub fn count(&mut self, min_record: usize) -> Result<usize, BinaryError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_record.max(1)) > self.buf.len() - self.pos {
            return Err(BinaryError::Truncated(self.pos));
        }
        Ok(n)
    }

    pub fn finish(self) -> Result<(), BinaryError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(BinaryError::Trailing(n)),
        }
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn to_u32(n: usize, what: &str) -> Result<u32, BinaryError> {
    u32::try_from(n).map_err(|_| BinaryError::Invalid(format!("{what} {n} exceeds u32")))
}
