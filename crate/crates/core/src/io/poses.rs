use std::collections::BTreeMap;
use std::path::Path;

use crate::geometry::Pose;
use crate::io::{read_file, write_file, IoError};

/// One line per pose: frame index followed by the 16 row-major entries of
/// the camera-to-world matrix. Values use shortest round-trip formatting.
pub fn write_poses(poses: &BTreeMap<u32, Pose>) -> String {
    let mut s = String::new();
    for (i, p) in poses {
        s.push_str(&i.to_string());
        for v in p.to_row_major() {
            s.push(' ');
            s.push_str(&format!("{v:?}"));
        }
        s.push('\n');
    }
    s
}

pub fn read_poses(text: &str) -> Result<BTreeMap<u32, Pose>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 17 {
            return Err(format!("line {}: expected 17 fields, found {}", n + 1, f.len()));
        }
        let index: u32 = f[0].parse().map_err(|e| format!("line {}: {e}", n + 1))?;
        let mut m = [0.0; 16];
        for (k, v) in m.iter_mut().enumerate() {
            *v = f[k + 1].parse().map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        let pose = Pose::from_row_major(&m).map_err(|e| format!("line {}: {e}", n + 1))?;
        if out.insert(index, pose).is_some() {
            return Err(format!("line {}: duplicate pose for frame {index}", n + 1));
        }
    }
    Ok(out)
}

pub fn save_poses(path: &Path, poses: &BTreeMap<u32, Pose>) -> Result<(), IoError> {
    write_file(path, write_poses(poses).as_bytes())
}

pub fn load_poses(path: &Path) -> Result<BTreeMap<u32, Pose>, IoError> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| IoError::format(path, e.to_string()))?;
    read_poses(text).map_err(|m| IoError::format(path, m))
}
