//! Pinhole camera model, depth back-projection, point projection with
//! frustum culling and occlusion filtering, and voxel-grid point fusion.

use std::collections::{HashMap, HashSet};

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::map::{Label, MapPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    Intrinsics(&'static str),
    #[error("rotation is not orthonormal with determinant +1 (error {0:e})")]
    NotRigid(f64),
    #[error("non-finite pose component")]
    NonFinitePose,
    #[error("image is {actual} pixels, expected {expected}")]
    ImageSize { expected: usize, actual: usize },
    #[error("negative or non-finite depth")]
    BadDepth,
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub const ORTHONORMAL_TOL: f64 = 1e-6;

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinitePose);
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if err > Self::ORTHONORMAL_TOL || (det - 1.0).abs() > Self::ORTHONORMAL_TOL {
            return Err(GeometryError::NotRigid(err.max((det - 1.0).abs())));
        }
        Ok(Self { rotation, translation })
    }

    /// From a row-major 4x4 homogeneous matrix.
    pub fn from_row_major(m: &[f64; 16]) -> Result<Self, GeometryError> {
        let m = Matrix4::from_row_slice(m);
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::NotRigid(f64::INFINITY));
        }
        Self::new(m.fixed_view::<3, 3>(0, 0).into_owned(), m.fixed_view::<3, 1>(0, 3).into_owned())
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    /// Camera at `eye` looking at `target`, world z up. Camera axes follow
    /// the usual optical convention (x right, y down, z forward).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Result<Self, GeometryError> {
        let forward = (target - eye).normalize();
        let up = Vector3::z();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(GeometryError::NotRigid(0.0));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self::new(rotation, eye)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World to camera.
    pub fn inverse_transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Meters per raw depth unit.
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::Intrinsics("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::Intrinsics("empty image"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(GeometryError::Intrinsics("principal point outside the image"));
        }
        if !(self.depth_scale > 0.0) {
            return Err(GeometryError::Intrinsics("depth scale must be positive"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera-frame point at pixel `(u, v)` with optical-axis depth `depth`.
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth)
    }

    /// Continuous pixel coordinates of a camera-frame point (z > 0 assumed).
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Integer pixel holding continuous coordinate `(u, v)` after rounding
    /// to the nearest pixel center, if inside the image.
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(u32, u32)> {
        let (iu, iv) = ((u + 0.5).floor(), (v + 0.5).floor());
        let inside = iu >= 0.0 && iv >= 0.0 && iu < self.width as f64 && iv < self.height as f64;
        inside.then_some((iu as u32, iv as u32))
    }
}

/// Row-major `height x width` RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[u8; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Keyframe {
    pub index: u32,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    /// Row-major depth in meters; 0 marks an invalid reading.
    pub depth: Vec<f32>,
    pub rgb: Option<RgbImage>,
}

impl Keyframe {
    pub fn new(
        index: u32,
        intrinsics: CameraIntrinsics,
        pose: Pose,
        depth: Vec<f32>,
        rgb: Option<RgbImage>,
    ) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        let n = intrinsics.pixel_count();
        if depth.len() != n {
            return Err(GeometryError::ImageSize { expected: n, actual: depth.len() });
        }
        if depth.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(GeometryError::BadDepth);
        }
        if let Some(img) = &rgb {
            if img.width != intrinsics.width || img.height != intrinsics.height || img.data.len() != n {
                return Err(GeometryError::ImageSize { expected: n, actual: img.data.len() });
            }
        }
        Ok(Self { index, intrinsics, pose, depth, rgb })
    }

    pub fn depth_at(&self, u: u32, v: u32) -> f32 {
        self.depth[v as usize * self.intrinsics.width as usize + u as usize]
    }

    pub fn pixel_to_world(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        self.pose.transform(&self.intrinsics.backproject(u, v, depth))
    }

    /// Continuous pixel and camera depth of a world point, or `None` behind
    /// the near plane.
    pub fn world_to_pixel(&self, p: &Vector3<f64>, z_min: f64) -> Option<(f64, f64, f64)> {
        let c = self.pose.inverse_transform(p);
        if !(c.z > z_min) {
            return None;
        }
        let (u, v) = self.intrinsics.project(&c);
        Some((u, v, c.z))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    /// Back-projection sampling stride in pixels.
    pub stride: u32,
    pub voxel_size: f64,
    /// Occlusion band: `max(occlusion_abs, occlusion_rel * depth)`.
    pub occlusion_abs: f64,
    pub occlusion_rel: f64,
    pub z_min: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { stride: 2, voxel_size: 0.02, occlusion_abs: 0.05, occlusion_rel: 0.02, z_min: 0.01 }
    }
}

impl GeometryConfig {
    pub fn occlusion_tolerance(&self, depth: f64) -> f64 {
        self.occlusion_abs.max(self.occlusion_rel * depth)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedPoint {
    pub u: f64,
    pub v: f64,
    /// Rounded pixel used for depth and mask lookups.
    pub pixel: (u32, u32),
    pub depth_cam: f64,
    pub label: Label,
    pub point_index: u32,
}

/// World points for every valid depth pixel on the `stride` grid, row-major.
pub fn backproject_depth(kf: &Keyframe, stride: u32, exec: Exec) -> Vec<Vector3<f64>> {
    let stride = stride.max(1) as usize;
    let w = kf.intrinsics.width as usize;
    let rows: Vec<usize> = (0..kf.intrinsics.height as usize).step_by(stride).collect();
    let per_row = exec.map(&rows, |&v| {
        (0..w)
            .step_by(stride)
            .filter_map(|u| {
                let d = kf.depth[v * w + u];
                (d > 0.0).then(|| kf.pixel_to_world(u as f64, v as f64, d as f64))
            })
            .collect::<Vec<_>>()
    });
    per_row.into_iter().flatten().collect()
}

/// Map points visible in `kf`: in front of the near plane, inside the image,
/// on a valid depth pixel and within the occlusion band of that reading.
pub fn project_points(points: &[MapPoint], kf: &Keyframe, cfg: &GeometryConfig, exec: Exec) -> Vec<ProjectedPoint> {
    exec.filter_map(points, |i, p| {
        let world = Vector3::new(p.position[0] as f64, p.position[1] as f64, p.position[2] as f64);
        let (u, v, z) = kf.world_to_pixel(&world, cfg.z_min)?;
        let pixel = kf.intrinsics.pixel_of(u, v)?;
        let measured = kf.depth_at(pixel.0, pixel.1) as f64;
        if measured <= 0.0 || (z - measured).abs() > cfg.occlusion_tolerance(measured) {
            return None;
        }
        Some(ProjectedPoint { u, v, pixel, depth_cam: z, label: p.label, point_index: i as u32 })
    })
}

pub type VoxelKey = [i64; 3];

/// Occupied-cell index over the map's points.
#[derive(Clone, Debug, Default)]
pub struct VoxelGrid {
    voxel_size: f64,
    cells: HashSet<VoxelKey>,
}

impl VoxelGrid {
    pub fn new(voxel_size: f64) -> Self {
        assert!(voxel_size > 0.0, "voxel size must be positive");
        Self { voxel_size, cells: HashSet::new() }
    }

    pub fn from_points(voxel_size: f64, points: &[MapPoint]) -> Self {
        let mut g = Self::new(voxel_size);
        let keys: Vec<VoxelKey> = points.iter().map(|p| g.key(&p.position)).collect();
        g.cells.extend(keys);
        g
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn key(&self, p: &[f32; 3]) -> VoxelKey {
        p.map(|c| (c as f64 / self.voxel_size).floor() as i64)
    }

    pub fn contains(&self, p: &[f32; 3]) -> bool {
        self.cells.contains(&self.key(p))
    }

    /// Stores at most one new point per unoccupied cell and returns the
    /// stored positions. Within a cell the lexicographically smallest
    /// candidate wins; cells are emitted in order of first appearance.
    pub fn fuse(&mut self, new_points: &[Vector3<f64>]) -> Vec<[f32; 3]> {
        let mut fresh: HashMap<VoxelKey, (usize, [f32; 3])> = HashMap::new();
        for (i, p) in new_points.iter().enumerate() {
            let q = [p.x as f32, p.y as f32, p.z as f32];
            if q.iter().any(|c| !c.is_finite()) {
                continue;
            }
            let key = self.key(&q);
            if self.cells.contains(&key) {
                continue;
            }
            fresh
                .entry(key)
                .and_modify(|(_, best)| {
                    if lex_less(&q, best) {
                        *best = q;
                    }
                })
                .or_insert((i, q));
        }
        let mut out: Vec<(usize, VoxelKey, [f32; 3])> = fresh.into_iter().map(|(k, (i, q))| (i, k, q)).collect();
        out.sort_unstable_by_key(|(i, _, _)| *i);
        self.cells.extend(out.iter().map(|(_, k, _)| *k));
        out.into_iter().map(|(_, _, q)| q).collect()
    }
}

fn lex_less(a: &[f32; 3], b: &[f32; 3]) -> bool {
    for k in 0..3 {
        match a[k].total_cmp(&b[k]) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}
