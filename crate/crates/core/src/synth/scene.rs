use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::geometry::{CameraIntrinsics, GeometryError, Keyframe, Pose, RgbImage};

/// Axis-aligned box carrying ground-truth class and instance ids.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub class: u32,
    /// Unique, >= 1; also the value written into the instance-id image.
    pub instance: u16,
}

impl SceneBox {
    /// Signed distance from `p` to the box surface (negative inside).
    pub fn sdf(&self, p: &[f64; 3]) -> f64 {
        let mut outside = 0.0;
        let mut inside = f64::NEG_INFINITY;
        for a in 0..3 {
            let c = (self.min[a] + self.max[a]) / 2.0;
            let h = (self.max[a] - self.min[a]) / 2.0;
            let q = (p[a] - c).abs() - h;
            outside += q.max(0.0).powi(2);
            inside = inside.max(q);
        }
        outside.sqrt() + inside.min(0.0)
    }

    /// Entry distance of the ray `o + t d`, if it hits with `t > 0`.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut ta, mut tb) = ((self.min[a] - o[a]) * inv, (self.max[a] - o[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub center: [f64; 3],
    pub radius: f64,
    pub height: f64,
    pub count: usize,
}

impl Orbit {
    /// Evenly spaced poses on the circle, all looking at `center`.
    pub fn poses(&self) -> Result<Vec<Pose>, GeometryError> {
        let c = Vector3::from(self.center);
        (0..self.count)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / self.count as f64;
                let eye = Vector3::new(c.x + self.radius * a.cos(), c.y + self.radius * a.sin(), self.height);
                Pose::look_at(eye, c)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    /// Interior of the room; walls and floor sit just outside it.
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    /// Floor, walls and furniture, all as boxes.
    pub boxes: Vec<SceneBox>,
    pub class_names: Vec<String>,
    pub orbit: Orbit,
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
}

pub const WALL: u32 = 0;
pub const FLOOR: u32 = 1;
pub const SLAB: f64 = 0.1;

/// Depth quantum of the standard scene, in meters per 16-bit unit.
pub const STANDARD_DEPTH_SCALE: f64 = 2e-4;

impl SceneLayout {
    /// Open-top room (floor and four walls) holding eight pieces of furniture
    /// from four classes, circled by 120 cameras at 160 x 120.
    pub fn standard(seed: u64) -> Self {
        let (lo, hi) = ([0.0, 0.0, 0.0], [6.0, 5.0, 2.6]);
        let furniture: [([f64; 3], [f64; 3], u32); 8] = [
            ([1.0, 1.0, 0.0], [2.2, 1.8, 0.75], 2),
            ([3.8, 3.0, 0.0], [5.0, 3.8, 0.75], 2),
            ([2.5, 1.1, 0.0], [3.0, 1.6, 0.9], 3),
            ([3.2, 3.4, 0.0], [3.7, 3.9, 0.9], 3),
            ([0.2, 3.6, 0.0], [0.9, 4.6, 1.8], 4),
            ([5.2, 0.3, 0.0], [5.8, 1.0, 1.6], 4),
            ([1.0, 2.8, 0.0], [2.6, 3.7, 0.8], 5),
            ([4.0, 1.0, 0.0], [5.0, 2.0, 0.6], 5),
        ];
        let mut boxes = room_shell(lo, hi);
        for (min, max, class) in furniture {
            let instance = boxes.len() as u16 + 1;
            boxes.push(SceneBox { min, max, class, instance });
        }
        Self {
            room_min: lo,
            room_max: hi,
            boxes,
            class_names: ["wall", "floor", "table", "chair", "cabinet", "sofa"].map(String::from).to_vec(),
            orbit: Orbit { center: [3.0, 2.5, 0.3], radius: 1.6, height: 1.5, count: 120 },
            intrinsics: CameraIntrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 80.0,
                cy: 60.0,
                width: 160,
                height: 120,
                depth_scale: STANDARD_DEPTH_SCALE,
            },
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn instance(&self, id: u16) -> Option<&SceneBox> {
        self.boxes.iter().find(|b| b.instance == id)
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut ids: Vec<u16> = self.boxes.iter().map(|b| b.instance).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) || ids.first() == Some(&0) {
            return Err("instance ids must be unique and non-zero".into());
        }
        if self.boxes.iter().any(|b| b.class as usize >= self.class_names.len()) {
            return Err("box class outside the class list".into());
        }
        if self.orbit.count == 0 {
            return Err("orbit needs at least one pose".into());
        }
        let (lo, hi) = (self.room_min, self.room_max);
        for b in &self.boxes {
            if (0..3).any(|a| b.min[a] < lo[a] - SLAB - 1e-9 || b.max[a] > hi[a] + SLAB + 1e-9 || b.min[a] >= b.max[a]) {
                return Err(format!("instance {} is outside the room", b.instance));
            }
        }
        self.intrinsics.validate().map_err(|e| e.to_string())
    }

    /// Instance whose surface is nearest to `p`; ties go to the lower id.
    pub fn nearest_instance(&self, p: &[f64; 3]) -> u16 {
        let mut best = (f64::INFINITY, u16::MAX);
        for b in &self.boxes {
            let d = b.sdf(p).abs();
            if d < best.0 || (d == best.0 && b.instance < best.1) {
                best = (d, b.instance);
            }
        }
        best.1
    }
}

/// Floor slab below the room and four wall slabs around it.
pub fn room_shell(lo: [f64; 3], hi: [f64; 3]) -> Vec<SceneBox> {
    let s = SLAB;
    let slabs = [
        ([lo[0] - s, lo[1] - s, lo[2] - s], [hi[0] + s, hi[1] + s, lo[2]], FLOOR),
        ([lo[0] - s, lo[1] - s, lo[2]], [hi[0] + s, lo[1], hi[2]], WALL),
        ([lo[0] - s, hi[1], lo[2]], [hi[0] + s, hi[1] + s, hi[2]], WALL),
        ([lo[0] - s, lo[1], lo[2]], [lo[0], hi[1], hi[2]], WALL),
        ([hi[0], lo[1], lo[2]], [hi[0] + s, hi[1], hi[2]], WALL),
    ];
    slabs
        .iter()
        .enumerate()
        .map(|(i, &(min, max, class))| SceneBox { min, max, class, instance: i as u16 + 1 })
        .collect()
}

/// Rendered keyframe: z-depth, instance ids (0 = no hit) and flat colors.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub depth: Vec<f32>,
    pub ids: Vec<u16>,
    pub rgb: RgbImage,
}

pub fn class_color(class: u32) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] =
        [[174, 199, 232], [152, 223, 138], [31, 119, 180], [255, 187, 120], [188, 189, 34], [140, 86, 75], [214, 39, 40], [148, 103, 189]];
    PALETTE[class as usize % PALETTE.len()]
}

/// Depth after a round trip through a 16-bit image with `scale` meters per unit.
pub fn quantize_depth(z: f64, scale: f64) -> f32 {
    let q = (z / scale).round();
    if !(1.0..=u16::MAX as f64).contains(&q) {
        return 0.0;
    }
    (q * scale) as f32
}

/// Casts one ray per pixel center against every box; the nearest hit wins
/// (ties: lower instance id). Depth is measured along the optical axis and
/// quantized to the intrinsics' depth scale.
pub fn render_frame(scene: &SceneLayout, pose: &Pose, exec: Exec) -> RenderedFrame {
    let k = scene.intrinsics;
    let (w, h) = (k.width as usize, k.height as usize);
    let origin = *pose.translation();
    let rows = exec.map_range(0..h, |v| {
        let mut row = Vec::with_capacity(w);
        for u in 0..w {
            let cam = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
            let dir = pose.rotation() * cam;
            let mut best: Option<(f64, &SceneBox)> = None;
            for b in &scene.boxes {
                if let Some(t) = b.intersect(&origin, &dir) {
                    if best.is_none_or(|(bt, bb)| t < bt || (t == bt && b.instance < bb.instance)) {
                        best = Some((t, b));
                    }
                }
            }
            row.push(match best {
                Some((t, b)) => {
                    let z = quantize_depth(t, k.depth_scale);
                    if z > 0.0 { (z, b.instance, class_color(b.class)) } else { (0.0, 0, [0, 0, 0]) }
                }
                None => (0.0, 0, [0, 0, 0]),
            });
        }
        row
    });
    let mut out = RenderedFrame {
        depth: Vec::with_capacity(w * h),
        ids: Vec::with_capacity(w * h),
        rgb: RgbImage { width: k.width, height: k.height, data: Vec::with_capacity(w * h) },
    };
    for (z, id, c) in rows.into_iter().flatten() {
        out.depth.push(z);
        out.ids.push(id);
        out.rgb.data.push(c);
    }
    out
}

impl RenderedFrame {
    pub fn keyframe(&self, index: u32, intrinsics: CameraIntrinsics, pose: Pose) -> Result<Keyframe, GeometryError> {
        Keyframe::new(index, intrinsics, pose, self.depth.clone(), Some(self.rgb.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::backproject_depth;

    fn facing_box() -> SceneLayout {
        let mut s = SceneLayout::standard(1);
        s.boxes = vec![SceneBox { min: [-1.0, -1.0, 2.0], max: [1.0, 1.0, 3.0], class: 0, instance: 1 }];
        s.intrinsics.depth_scale = 1e-4;
        s
    }

    #[test]
    fn principal_ray_hits_box_face() {
        let s = facing_box();
        let f = render_frame(&s, &Pose::identity(), Exec::Sequential);
        let c = 60 * 160 + 80;
        assert!((f.depth[c] as f64 - 2.0).abs() < 1e-6);
        assert_eq!(f.ids[c], 1);
    }

    #[test]
    fn missed_rays_are_invalid() {
        let s = facing_box();
        let pose = Pose::look_at(Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, -1.0, 0.0)).unwrap();
        let f = render_frame(&s, &pose, Exec::Sequential);
        assert!(f.depth.iter().all(|&d| d == 0.0));
        assert!(f.ids.iter().all(|&i| i == 0));
    }

    #[test]
    fn rendering_is_deterministic_and_mode_independent() {
        let s = SceneLayout::standard(3);
        let poses = s.orbit.poses().unwrap();
        let a = render_frame(&s, &poses[7], Exec::Parallel);
        let b = render_frame(&s, &poses[7], Exec::Sequential);
        assert_eq!(a, b);
        // ids partition hit pixels
        assert!(a.depth.iter().zip(&a.ids).all(|(&d, &i)| (d > 0.0) == (i > 0)));
    }

    #[test]
    fn standard_scene_shape() {
        let s = SceneLayout::standard(1234);
        s.validate().unwrap();
        assert_eq!(s.boxes.len(), 13);
        assert_eq!(s.boxes.iter().filter(|b| b.class >= 2).count(), 8);
        assert_eq!(s.num_classes(), 6);
        assert_eq!(s.orbit.poses().unwrap().len(), 120);
    }

    #[test]
    fn backprojected_points_recover_mask_instances() {
        let s = SceneLayout::standard(1234);
        let poses = s.orbit.poses().unwrap();
        let (mut agree, mut total) = (0usize, 0usize);
        for i in [0, 31, 77] {
            let f = render_frame(&s, &poses[i], Exec::Parallel);
            let kf = f.keyframe(i as u32, s.intrinsics, poses[i]).unwrap();
            let pts = backproject_depth(&kf, 1, Exec::Parallel);
            let hits: Vec<u16> = f.ids.iter().copied().filter(|&id| id > 0).collect();
            assert_eq!(pts.len(), hits.len());
            for (p, id) in pts.iter().zip(hits) {
                total += 1;
                agree += usize::from(s.nearest_instance(&[p.x, p.y, p.z]) == id);
            }
        }
        assert!(agree as f64 >= 0.999 * total as f64, "{agree}/{total}");
    }

    #[test]
    fn sdf_signs() {
        let b = SceneBox { min: [0.0; 3], max: [1.0; 3], class: 0, instance: 1 };
        assert!((b.sdf(&[0.5, 0.5, 2.0]) - 1.0).abs() < 1e-12);
        assert!((b.sdf(&[0.5, 0.5, 0.5]) + 0.5).abs() < 1e-12);
        assert_eq!(b.sdf(&[1.0, 0.5, 0.5]), 0.0);
    }
}
