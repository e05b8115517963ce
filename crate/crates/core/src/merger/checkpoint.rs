//! Parameter checkpoints.
//!
//! Layout (little-endian): magic `OVOM`, version `u32`, D `u32`, then every
//! parameter as `f64` in [`Layout`](crate::merger::Layout) order. The file
//! ends right after the last parameter.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::merger::{Layout, MergerError, MergerParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OVOM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("bad magic {0:?}, expected OVOM")]
    Magic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("trailing bytes after the last parameter")]
    Trailing,
    #[error(transparent)]
    Params(#[from] MergerError),
}

fn truncated(e: io::Error) -> CheckpointError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        CheckpointError::Truncated
    } else {
        CheckpointError::Io { path: String::new(), source: e }
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, p: &MergerParams) -> io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(p.dim() as u32).to_le_bytes())?;
    for v in p.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<MergerParams, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Magic(magic));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(truncated)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    r.read_exact(&mut word).map_err(truncated)?;
    let dim = u32::from_le_bytes(word) as usize;
    let n = Layout::new(dim).len();
    let mut values = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf).map_err(truncated)?;
        values.push(f64::from_le_bytes(buf));
    }
    if r.read(&mut buf[..1]).map_err(truncated)? != 0 {
        return Err(CheckpointError::Trailing);
    }
    Ok(MergerParams::from_values(dim, values)?)
}

pub fn save_checkpoint(path: &Path, p: &MergerParams) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let f = File::create(path).map_err(io_err)?;
    write_checkpoint(BufWriter::new(f), p).map_err(io_err)
}

pub fn load_checkpoint(path: &Path) -> Result<MergerParams, CheckpointError> {
    let f = File::open(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    read_checkpoint(BufReader::new(f)).map_err(|e| match e {
        CheckpointError::Io { source, .. } => CheckpointError::Io { path: path.display().to_string(), source },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_bytes() {
        let p = MergerParams::zeros(1);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        assert_eq!(&buf[..12], b"OVOM\x01\x00\x00\x00\x01\x00\x00\x00");
        assert_eq!(buf.len(), 12 + 8 * Layout::new(1).len());
    }

    #[test]
    fn rejects_corruption() {
        let p = MergerParams::zeros(2);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        assert!(matches!(read_checkpoint(&buf[..buf.len() - 1]), Err(CheckpointError::Truncated)));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_checkpoint(extra.as_slice()), Err(CheckpointError::Trailing)));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(CheckpointError::Magic(_))));
        let mut ver = buf;
        ver[4] = 9;
        assert!(matches!(read_checkpoint(ver.as_slice()), Err(CheckpointError::Version(9))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ovom");
        let p = MergerParams::init(3, &mut ChaCha8Rng::seed_from_u64(1));
        save_checkpoint(&path, &p).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
        assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(CheckpointError::Io { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(dim in 1usize..5, seed in any::<u64>(), scale in 1e-3f64..10.0) {
            let p = MergerParams::random(dim, scale, &mut ChaCha8Rng::seed_from_u64(seed));
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &p).unwrap();
            prop_assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), p);
        }
    }
}
