use std::path::Path;

use crate::eval::TimingReport;
use crate::io::{load_ply, load_poses, load_segments, read_file, save_ply, save_poses, save_segments, write_file, IoError};
use crate::map::WorldMap;

pub const POINTS_FILE: &str = "points.ply";
pub const SEGMENTS_FILE: &str = "segments.ovos";
pub const POSES_FILE: &str = "poses.txt";
pub const TIMING_FILE: &str = "timing.json";

/// Writes the labeled cloud, segments and keyframe poses into `dir`.
pub fn save_map(dir: &Path, map: &WorldMap) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    save_ply(&dir.join(POINTS_FILE), map.points())?;
    save_segments(&dir.join(SEGMENTS_FILE), map.segments(), map.heap_capacity())?;
    save_poses(&dir.join(POSES_FILE), map.poses())
}

pub fn load_map(dir: &Path) -> Result<WorldMap, IoError> {
    let points = load_ply(&dir.join(POINTS_FILE))?;
    let seg_path = dir.join(SEGMENTS_FILE);
    let (segments, capacity) = load_segments(&seg_path)?;
    let poses = load_poses(&dir.join(POSES_FILE))?;
    WorldMap::from_parts(capacity, poses, points, segments).map_err(|e| IoError::format(&seg_path, e.to_string()))
}

pub fn save_timing(dir: &Path, timing: &TimingReport) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(timing).expect("timing serializes");
    write_file(&dir.join(TIMING_FILE), text.as_bytes())
}

pub fn load_timing(dir: &Path) -> Result<TimingReport, IoError> {
    let path = dir.join(TIMING_FILE);
    serde_json::from_slice(&read_file(&path)?).map_err(|e| IoError::format(&path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Stage;
    use crate::geometry::Pose;
    use crate::map::ViewEntry;
    use nalgebra::Vector3;

    fn sample_map() -> WorldMap {
        let mut m = WorldMap::new(3).unwrap();
        m.insert_pose(0, Pose::identity()).unwrap();
        m.insert_pose(4, Pose::look_at(Vector3::new(1.0, 2.0, 1.5), Vector3::new(3.0, 2.5, 0.2)).unwrap()).unwrap();
        m.push_points([[0.1, 0.2, 0.3], [1.0 / 3.0, -2.5, 1e-7], [4.0, 4.0, 4.0]]);
        let a = m.create_segment(0, 40).unwrap();
        let b = m.create_segment(4, 7).unwrap();
        m.offer_view(a, ViewEntry::new(4, 12)).unwrap();
        m.set_descriptor(a, 0, vec![0.6, 0.8, 0.0]).unwrap();
        m.set_descriptor(a, 4, vec![0.0, 0.6, 0.8]).unwrap();
        m.set_descriptor(b, 4, vec![1.0, 2.0, 2.0]).unwrap();
        m.label_point(0, a);
        m.label_point(2, b);
        m
    }

    #[test]
    fn map_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample_map();
        save_map(dir.path(), &m).unwrap();
        assert_eq!(load_map(dir.path()).unwrap(), m);
        let again = dir.path().join("again");
        save_map(&again, &load_map(dir.path()).unwrap()).unwrap();
        for f in [POINTS_FILE, SEGMENTS_FILE, POSES_FILE] {
            assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn empty_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = WorldMap::new(10).unwrap();
        save_map(dir.path(), &m).unwrap();
        assert_eq!(load_map(dir.path()).unwrap(), m);
    }

    #[test]
    fn dangling_point_labels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_map(dir.path(), &sample_map()).unwrap();
        let ply = std::fs::read_to_string(dir.path().join(POINTS_FILE)).unwrap();
        std::fs::write(dir.path().join(POINTS_FILE), ply.replace("4 4 4 1", "4 4 4 9")).unwrap();
        assert!(load_map(dir.path()).is_err());
    }

    #[test]
    fn timing_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = TimingReport::default();
        t.record_stage(0, Stage::Seg, 0.25);
        t.record_stage(0, Stage::Clip, 0.125);
        t.record_wall(0, 1.0);
        save_timing(dir.path(), &t).unwrap();
        assert_eq!(load_timing(dir.path()).unwrap(), t);
    }
}
