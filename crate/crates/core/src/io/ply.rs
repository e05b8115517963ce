use std::path::Path;

use crate::io::{read_file, write_file, IoError};
use crate::map::MapPoint;

const HEADER: &str = "ply\nformat ascii 1.0\nelement vertex {n}\nproperty float x\nproperty float y\nproperty float z\nproperty int label\nend_header\n";

/// ASCII point cloud with `x y z label` per vertex. Coordinates use the
/// shortest decimal form that parses back to the same `f32`.
pub fn write_ply(points: &[MapPoint]) -> String {
    let mut s = HEADER.replace("{n}", &points.len().to_string());
    for p in points {
        let [x, y, z] = p.position;
        s.push_str(&format!("{x} {y} {z} {}\n", p.label));
    }
    s
}

pub fn read_ply(text: &str) -> Result<Vec<MapPoint>, String> {
    let mut lines = text.lines();
    let mut count = None;
    let mut props = Vec::new();
    if lines.next() != Some("ply") {
        return Err("missing ply signature".into());
    }
    loop {
        let line = lines.next().ok_or("header not terminated")?.trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", "1.0"] => {}
            ["format", ..] => return Err(format!("unsupported format line: {line}")),
            ["comment", ..] | [] => {}
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|e| format!("vertex count: {e}"))?),
            ["element", other, ..] => return Err(format!("unexpected element {other}")),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            ["end_header"] => break,
            _ => return Err(format!("bad header line: {line}")),
        }
    }
    let expected = [("float", "x"), ("float", "y"), ("float", "z"), ("int", "label")];
    if props.len() != 4 || props.iter().zip(expected).any(|(p, e)| p.0 != e.0 || p.1 != e.1) {
        return Err("expected properties float x, float y, float z, int label".into());
    }
    let n = count.ok_or("missing vertex element")?;
    let mut points = Vec::with_capacity(n.min(1 << 24));
    for i in 0..n {
        let line = lines.next().ok_or_else(|| format!("expected {n} vertices, found {i}"))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(format!("vertex {i}: expected 4 fields"));
        }
        let c = |j: usize| f[j].parse::<f32>().map_err(|e| format!("vertex {i}: {e}"));
        let position = [c(0)?, c(1)?, c(2)?];
        if position.iter().any(|v| !v.is_finite()) {
            return Err(format!("vertex {i}: non-finite coordinate"));
        }
        let label = f[3].parse::<i32>().map_err(|e| format!("vertex {i}: {e}"))?;
        points.push(MapPoint { position, label });
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err("data after the last vertex".into());
    }
    Ok(points)
}

pub fn save_ply(path: &Path, points: &[MapPoint]) -> Result<(), IoError> {
    write_file(path, write_ply(points).as_bytes())
}

pub fn load_ply(path: &Path) -> Result<Vec<MapPoint>, IoError> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| IoError::format(path, e.to_string()))?;
    read_ply(text).map_err(|m| IoError::format(path, m))
}
