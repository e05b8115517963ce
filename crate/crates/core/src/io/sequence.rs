use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::descriptor::EmbeddingTable;
use crate::eval::save_class_table;
use crate::geometry::{CameraIntrinsics, Keyframe, Pose};
use crate::io::{
    load_depth, load_embeddings, load_mask_ids, load_poses, load_rgb, read_file, save_depth, save_embeddings,
    save_mask_ids, save_ply, save_poses, save_rgb, write_file, IoError, PipelineConfig,
};
use crate::map::MapPoint;
use crate::mapper::{masks_from_id_image, Mask2D};
use crate::synth::SyntheticSequence;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CLASSES_FILE: &str = "classes.ovoc";
pub const GT_FILE: &str = "gt.ply";
pub const DEFAULT_KEYFRAME_STRIDE: usize = 10;

fn default_stride() -> usize {
    DEFAULT_KEYFRAME_STRIDE
}

/// Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: u32,
    pub depth: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub intrinsics: CameraIntrinsics,
    pub poses: PathBuf,
    /// Every `keyframe_stride`-th frame record is processed.
    #[serde(default = "default_stride")]
    pub keyframe_stride: usize,
    pub frames: Vec<FrameRecord>,
}

impl SequenceManifest {
    pub fn validate(&self) -> Result<(), String> {
        self.intrinsics.validate().map_err(|e| e.to_string())?;
        if self.keyframe_stride == 0 {
            return Err("keyframe_stride must be >= 1".into());
        }
        if let Some(w) = self.frames.windows(2).find(|w| w[0].index >= w[1].index) {
            return Err(format!("frame indices must increase strictly ({} then {})", w[0].index, w[1].index));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let bytes = read_file(path)?;
        let m: Self = serde_json::from_slice(&bytes).map_err(|e| IoError::format(path, e.to_string()))?;
        m.validate().map_err(|e| IoError::format(path, e))?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(path, text.as_bytes())
    }
}

/// One keyframe with its decoded masks and embedding records.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedFrame {
    pub keyframe: Keyframe,
    pub masks: Vec<Mask2D>,
    pub embeddings: Option<EmbeddingTable>,
}

/// Lazily decodes the selected keyframes in index order.
pub struct SequenceFrames {
    dir: PathBuf,
    manifest: SequenceManifest,
    poses: BTreeMap<u32, Pose>,
    selected: std::vec::IntoIter<usize>,
}

impl SequenceFrames {
    pub fn manifest(&self) -> &SequenceManifest {
        &self.manifest
    }

    pub fn remaining(&self) -> usize {
        self.selected.len()
    }

    fn decode(&self, r: &FrameRecord) -> Result<LoadedFrame, IoError> {
        let k = self.manifest.intrinsics;
        let depth_path = self.dir.join(&r.depth);
        let depth = load_depth(&depth_path, k.width, k.height, k.depth_scale)?;
        let rgb = r.rgb.as_ref().map(|p| load_rgb(&self.dir.join(p), k.width, k.height)).transpose()?;
        let keyframe = Keyframe::new(r.index, k, self.poses[&r.index], depth, rgb)
            .map_err(|e| IoError::format(&depth_path, e.to_string()))?;
        let masks = match &r.mask {
            Some(p) => {
                let path = self.dir.join(p);
                let ids = load_mask_ids(&path, k.width, k.height)?;
                masks_from_id_image(r.index, k.width, k.height, &ids).map_err(|e| IoError::format(&path, e.to_string()))?
            }
            None => Vec::new(),
        };
        let embeddings = r.embeddings.as_ref().map(|p| load_embeddings(&self.dir.join(p))).transpose()?;
        Ok(LoadedFrame { keyframe, masks, embeddings })
    }
}

impl Iterator for SequenceFrames {
    type Item = Result<LoadedFrame, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        let i = self.selected.next()?;
        let r = &self.manifest.frames[i];
        Some(self.decode(r).map_err(|e| e.in_frame(r.index)))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining(), Some(self.remaining()))
    }
}

impl ExactSizeIterator for SequenceFrames {}

/// Opens a sequence. Every referenced file must exist and the pose file must
/// hold exactly one pose per frame record; both are checked up front.
/// `stride` overrides the manifest's keyframe stride.
pub fn load_sequence(manifest_path: &Path, stride: Option<usize>) -> Result<SequenceFrames, IoError> {
    let mut manifest = SequenceManifest::load(manifest_path)?;
    if let Some(s) = stride {
        if s == 0 {
            return Err(IoError::format(manifest_path, "keyframe stride must be >= 1"));
        }
        manifest.keyframe_stride = s;
    }
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let poses_path = dir.join(&manifest.poses);
    let poses = load_poses(&poses_path)?;
    if poses.len() != manifest.frames.len() {
        return Err(IoError::format(
            &poses_path,
            format!("{} poses for {} frames", poses.len(), manifest.frames.len()),
        ));
    }
    for r in &manifest.frames {
        if !poses.contains_key(&r.index) {
            return Err(IoError::format(&poses_path, format!("no pose for frame {}", r.index)));
        }
        for p in std::iter::once(&r.depth).chain(&r.rgb).chain(&r.mask).chain(&r.embeddings) {
            let full = dir.join(p);
            if !full.is_file() {
                return Err(IoError::io(&full, std::io::ErrorKind::NotFound.into()).in_frame(r.index));
            }
        }
    }
    let selected: Vec<usize> = (0..manifest.frames.len()).step_by(manifest.keyframe_stride).collect();
    Ok(SequenceFrames { dir, manifest, poses, selected: selected.into_iter() })
}

fn mkdir(path: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(path).map_err(|e| IoError::io(path, e))
}

/// Writes a rendered sequence plus its class table, ground-truth vertices,
/// scene description and a matching pipeline config. Every rendered frame
/// is a keyframe.
pub fn write_synthetic_sequence(seq: &SyntheticSequence, dir: &Path) -> Result<SequenceManifest, IoError> {
    let scene = &seq.config.scene;
    let k = scene.intrinsics;
    for sub in ["depth", "rgb", "masks", "embeddings"] {
        mkdir(&dir.join(sub))?;
    }
    let mut frames = Vec::with_capacity(seq.frames.len());
    let mut poses = BTreeMap::new();
    for f in &seq.frames {
        let name = format!("{:06}", f.index);
        let r = FrameRecord {
            index: f.index,
            depth: PathBuf::from(format!("depth/{name}.png")),
            rgb: Some(PathBuf::from(format!("rgb/{name}.png"))),
            mask: Some(PathBuf::from(format!("masks/{name}.png"))),
            embeddings: Some(PathBuf::from(format!("embeddings/{name}.ovoe"))),
        };
        save_depth(&dir.join(&r.depth), &f.render.depth, k.width, k.height, k.depth_scale)?;
        save_rgb(&dir.join(r.rgb.as_ref().expect("set above")), &f.render.rgb)?;
        save_mask_ids(&dir.join(r.mask.as_ref().expect("set above")), &f.render.ids, k.width, k.height)?;
        save_embeddings(&dir.join(r.embeddings.as_ref().expect("set above")), &f.embeddings(seq.config.dim))?;
        poses.insert(f.index, f.pose);
        frames.push(r);
    }
    save_poses(&dir.join("poses.txt"), &poses)?;
    let manifest = SequenceManifest { intrinsics: k, poses: "poses.txt".into(), keyframe_stride: 1, frames };
    manifest.save(&dir.join(MANIFEST_FILE))?;

    let classes = seq.class_table().map_err(|e| IoError::format(&dir.join(CLASSES_FILE), e.to_string()))?;
    save_class_table(&dir.join(CLASSES_FILE), &classes).map_err(|e| IoError::format(&dir.join(CLASSES_FILE), e.to_string()))?;
    let (verts, labels) = seq.ground_truth();
    let gt: Vec<MapPoint> = verts
        .iter()
        .zip(&labels)
        .map(|(v, &label)| MapPoint { position: [v[0] as f32, v[1] as f32, v[2] as f32], label })
        .collect();
    save_ply(&dir.join(GT_FILE), &gt)?;
    let scene_json = serde_json::to_string_pretty(&seq.config).expect("scene serializes");
    write_file(&dir.join("scene.json"), scene_json.as_bytes())?;
    let mut config = PipelineConfig::synthetic();
    config.dim = Some(seq.config.dim);
    config.save(&dir.join("config.toml"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_sequence, SynthConfig};
    use crate::Exec;

    fn small() -> SyntheticSequence {
        let mut c = SynthConfig::standard(7);
        c.scene.orbit.count = 4;
        c.dim = 8;
        generate_sequence(&c, Exec::Parallel).unwrap()
    }

    #[test]
    fn synthetic_round_trip() {
        let seq = small();
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_sequence(&seq, dir.path()).unwrap();
        let frames: Vec<LoadedFrame> =
            load_sequence(&dir.path().join(MANIFEST_FILE), None).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(frames.len(), 4);
        for (f, s) in frames.iter().zip(&seq.frames) {
            assert_eq!(f.keyframe, s.keyframe(&seq.config.scene).unwrap());
            assert_eq!(f.masks, s.masks(&seq.config.scene).unwrap());
            assert_eq!(f.embeddings.as_ref().unwrap(), &s.embeddings(8));
        }
    }

    #[test]
    fn stride_selects_every_nth_record() {
        let seq = small();
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_sequence(&seq, dir.path()).unwrap();
        let m = dir.path().join(MANIFEST_FILE);
        let idx: Vec<u32> = load_sequence(&m, Some(3)).unwrap().map(|f| f.unwrap().keyframe.index).collect();
        assert_eq!(idx, vec![0, 3]);
        assert!(load_sequence(&m, Some(0)).is_err());
    }

    #[test]
    fn default_stride_over_a_hundred_frames() {
        let k = CameraIntrinsics { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0, width: 1, height: 1, depth_scale: 1e-3 };
        let dir = tempfile::tempdir().unwrap();
        let mut poses = BTreeMap::new();
        let mut frames = Vec::new();
        for i in 0..100u32 {
            let depth = PathBuf::from(format!("{i}.png"));
            save_depth(&dir.path().join(&depth), &[1.0], 1, 1, 1e-3).unwrap();
            frames.push(FrameRecord { index: i, depth, rgb: None, mask: None, embeddings: None });
            poses.insert(i, Pose::identity());
        }
        save_poses(&dir.path().join("p.txt"), &poses).unwrap();
        let text = serde_json::to_string(&SequenceManifest { intrinsics: k, poses: "p.txt".into(), keyframe_stride: 1, frames })
            .unwrap()
            .replace(",\"keyframe_stride\":1", "");
        let m = dir.path().join(MANIFEST_FILE);
        std::fs::write(&m, text).unwrap();
        let loaded: Vec<LoadedFrame> = load_sequence(&m, None).unwrap().map(Result::unwrap).collect();
        assert_eq!(loaded.len(), 10);
        assert!(loaded.iter().all(|f| f.masks.is_empty() && f.embeddings.is_none()));
    }

    #[test]
    fn missing_files_and_pose_mismatch() {
        let seq = small();
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_sequence(&seq, dir.path()).unwrap();
        let m = dir.path().join(MANIFEST_FILE);
        std::fs::remove_file(dir.path().join("masks/000002.png")).unwrap();
        let err = load_sequence(&m, None).err().unwrap().to_string();
        assert!(err.contains("frame 2") && err.contains("masks/000002.png"), "{err}");

        write_synthetic_sequence(&seq, dir.path()).unwrap();
        let poses = std::fs::read_to_string(dir.path().join("poses.txt")).unwrap();
        let fewer: String = poses.lines().take(3).map(|l| format!("{l}\n")).collect();
        std::fs::write(dir.path().join("poses.txt"), fewer).unwrap();
        let err = load_sequence(&m, None).err().unwrap().to_string();
        assert!(err.contains("3 poses for 4 frames"), "{err}");
    }

    #[test]
    fn corrupt_frame_reports_path_and_frame() {
        let seq = small();
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_sequence(&seq, dir.path()).unwrap();
        std::fs::write(dir.path().join("embeddings/000001.ovoe"), b"OVOE").unwrap();
        let results: Vec<_> = load_sequence(&dir.path().join(MANIFEST_FILE), None).unwrap().collect();
        assert!(results[0].is_ok());
        let err = results[1].as_ref().unwrap_err().to_string();
        assert!(err.starts_with("frame 1:") && err.contains("000001.ovoe"), "{err}");
    }

    #[test]
    fn indices_must_increase() {
        let k = CameraIntrinsics { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0, width: 1, height: 1, depth_scale: 1e-3 };
        let r = |index| FrameRecord { index, depth: "d.png".into(), rgb: None, mask: None, embeddings: None };
        let m = SequenceManifest { intrinsics: k, poses: "p".into(), keyframe_stride: 1, frames: vec![r(1), r(1)] };
        assert!(m.validate().is_err());
    }
}
