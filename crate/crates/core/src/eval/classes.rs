//! Class vocabulary with pre-encoded text embeddings.
//!
//! File layout (little-endian): magic `OVOC`, version `u32`, count `u32`,
//! D `u32`; per class: name length `u32`, UTF-8 name bytes, frequency flag
//! `u8` (1 = present) followed by a `u64` when present, then D `f32`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::vector::{UnitVector, VectorError};

pub const CLASS_MAGIC: &[u8; 4] = b"OVOC";
pub const CLASS_VERSION: u32 = 1;
/// Prompt the embeddings are expected to be encoded from.
pub const QUERY_TEMPLATE: &str = "This is a photo of a {category}";

#[derive(Debug, Error)]
pub enum ClassError {
    #[error("class table is empty")]
    Empty,
    #[error("duplicate class name {0:?}")]
    DuplicateName(String),
    #[error("class {name:?}: {source}")]
    Vector { name: String, source: VectorError },
    #[error("names, embeddings and frequencies disagree in length")]
    Length,
    #[error("bad magic {0:?}, expected OVOC")]
    Magic([u8; 4]),
    #[error("unsupported class table version {0}")]
    Version(u32),
    #[error("class name is not UTF-8")]
    Utf8,
    #[error("class table truncated")]
    Truncated,
    #[error("trailing bytes after the class table")]
    Trailing,
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassTable {
    names: Vec<String>,
    embeddings: Vec<UnitVector>,
    frequencies: Vec<Option<u64>>,
}

impl ClassTable {
    pub fn new(names: Vec<String>, embeddings: Vec<UnitVector>, frequencies: Vec<Option<u64>>) -> Result<Self, ClassError> {
        if names.is_empty() {
            return Err(ClassError::Empty);
        }
        if names.len() != embeddings.len() || names.len() != frequencies.len() {
            return Err(ClassError::Length);
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(ClassError::DuplicateName(n.clone()));
            }
        }
        let d = embeddings[0].dim();
        for (n, e) in names.iter().zip(&embeddings) {
            if e.dim() != d {
                return Err(ClassError::Vector {
                    name: n.clone(),
                    source: VectorError::Dimension { expected: d, actual: e.dim() },
                });
            }
        }
        Ok(Self { names, embeddings, frequencies })
    }

    /// Normalizes raw rows.
    pub fn from_raw(names: Vec<String>, rows: Vec<Vec<f64>>, frequencies: Vec<Option<u64>>) -> Result<Self, ClassError> {
        if names.len() != rows.len() {
            return Err(ClassError::Length);
        }
        let embeddings = names
            .iter()
            .zip(rows)
            .map(|(n, r)| UnitVector::new(r).map_err(|source| ClassError::Vector { name: n.clone(), source }))
            .collect::<Result<_, _>>()?;
        Self::new(names, embeddings, frequencies)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].dim()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn embeddings(&self) -> &[UnitVector] {
        &self.embeddings
    }

    pub fn frequencies(&self) -> &[Option<u64>] {
        &self.frequencies
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn prompt(&self, class: usize) -> String {
        QUERY_TEMPLATE.replace("{category}", &self.names[class])
    }
}

pub fn write_class_table<W: Write>(mut w: W, t: &ClassTable) -> io::Result<()> {
    w.write_all(CLASS_MAGIC)?;
    for v in [CLASS_VERSION, t.len() as u32, t.dim() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for ((name, e), f) in t.names.iter().zip(&t.embeddings).zip(&t.frequencies) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        match f {
            Some(f) => {
                w.write_all(&[1])?;
                w.write_all(&f.to_le_bytes())?;
            }
            None => w.write_all(&[0])?,
        }
        for &x in e.iter() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()
}

fn eof(e: io::Error) -> ClassError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        ClassError::Truncated
    } else {
        ClassError::Io { path: String::new(), source: e }
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ClassError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(eof)?;
    Ok(u32::from_le_bytes(b))
}

/// Rows are renormalized after the f32 round trip.
pub fn read_class_table<R: Read>(mut r: R) -> Result<ClassTable, ClassError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != CLASS_MAGIC {
        return Err(ClassError::Magic(magic));
    }
    let version = read_u32(&mut r)?;
    if version != CLASS_VERSION {
        return Err(ClassError::Version(version));
    }
    let count = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    let (mut names, mut rows, mut freqs) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(eof)?;
        names.push(String::from_utf8(name).map_err(|_| ClassError::Utf8)?);
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(eof)?;
        freqs.push(if flag[0] != 0 {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(eof)?;
            Some(u64::from_le_bytes(b))
        } else {
            None
        });
        let mut row = Vec::with_capacity(dim);
        let mut b = [0u8; 4];
        for _ in 0..dim {
            r.read_exact(&mut b).map_err(eof)?;
            row.push(f32::from_le_bytes(b) as f64);
        }
        rows.push(row);
    }
    if r.read(&mut [0u8; 1]).map_err(eof)? != 0 {
        return Err(ClassError::Trailing);
    }
    ClassTable::from_raw(names, rows, freqs)
}

pub fn save_class_table(path: &Path, t: &ClassTable) -> Result<(), ClassError> {
    let io_err = |source| ClassError::Io { path: path.display().to_string(), source };
    let f = File::create(path).map_err(io_err)?;
    write_class_table(BufWriter::new(f), t).map_err(io_err)
}

pub fn load_class_table(path: &Path) -> Result<ClassTable, ClassError> {
    let f = File::open(path).map_err(|source| ClassError::Io { path: path.display().to_string(), source })?;
    read_class_table(BufReader::new(f)).map_err(|e| match e {
        ClassError::Io { source, .. } => ClassError::Io { path: path.display().to_string(), source },
        other => other,
    })
}
