//! Procedural cuboid worlds with analytic depth, masks and a QA oracle.
//!
//! World frame: `up = -y`, ground plane at `y = 0`. The input camera sits
//! above the ground pitched down, so every camera-relative quantity goes
//! through its pose.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{for_each_row, Exec};
use crate::geometry::{
    axis_angle, box_corners, project, CameraIntrinsics, CameraPose, CameraRig, DepthGrid,
    InstanceMask, OrientedBox3, SandboxScene, ViewFrame, ViewId,
};
use crate::raster::{Raster, Rgb};
use crate::render::palette_color;
use crate::{Mat3, Vec3};

pub mod qa;

pub use qa::{
    generate_questions, oracle_answer, synthetic_benchmark, Category, QARecord, QaError, QuestionSpec,
    SceneRef,
};

pub const VOCABULARY: [&str; 8] = ["chair", "table", "sofa", "lamp", "cabinet", "plant", "bed", "desk"];

pub const GROUND_COLOR: Rgb = [96, 96, 96];
pub const SKY_COLOR: Rgb = [24, 28, 44];

/// Hit-map codes for pixels that do not show a cuboid.
pub const HIT_GROUND: i32 = -1;
pub const HIT_NONE: i32 = -2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("could not place {k} objects for seed {seed}")]
    Generation { seed: u64, k: usize },
    #[error("object count {0} outside 1..=8")]
    ObjectCount(usize),
    #[error("no instance {0} in world")]
    UnknownInstance(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuboidSpec {
    pub center: Vec3,
    /// Rotation about the up axis, degrees.
    pub yaw_deg: f64,
    /// Extent along local x, up and local z.
    pub size: Vec3,
    pub label: String,
    pub instance_id: u32,
}

impl CuboidSpec {
    pub fn to_obb(&self, up: &Vec3) -> OrientedBox3 {
        let yaw = axis_angle(up, self.yaw_deg.to_radians());
        // local y runs along -up so that the frame stays right-handed for up = -y
        let base = base_frame(up);
        let axes = yaw * base;
        OrientedBox3 {
            center: self.center,
            axes,
            half_extents: self.size / 2.0,
            label: self.label.clone(),
            instance_id: self.instance_id,
        }
    }
}

/// Right-handed frame whose second column is `-up`.
fn base_frame(up: &Vec3) -> Mat3 {
    let y = -up.normalize();
    let seed = if y.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
    let x = y.cross(&seed).normalize();
    let z = x.cross(&y);
    Mat3::from_columns(&[x, y, z])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub cuboids: Vec<CuboidSpec>,
    pub camera: CameraRig,
    pub up: Vec3,
    /// The ground plane `up . p = 0` is rendered.
    pub ground: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldBounds {
    pub x: (f64, f64),
    pub z: (f64, f64),
    pub size: (f64, f64),
    /// Minimum footprint gap between cuboids, meters.
    pub clearance: f64,
    /// Pixels kept free around every projected corner.
    pub margin_px: f64,
    /// Minimum visible fraction of each cuboid's silhouette in the input view.
    pub min_visible: f64,
    pub image_size: u32,
    pub hfov_deg: f64,
    pub camera_height: f64,
    pub pitch_deg: f64,
    pub vocabulary: Vec<String>,
    pub max_restarts: usize,
}

impl Default for WorldBounds {
    fn default() -> Self {
        Self {
            x: (-2.5, 2.5),
            z: (2.5, 7.0),
            size: (0.3, 1.2),
            clearance: 0.3,
            margin_px: 4.0,
            min_visible: 0.5,
            image_size: 256,
            hfov_deg: 70.0,
            camera_height: 1.8,
            pitch_deg: 25.0,
            vocabulary: VOCABULARY.iter().map(|s| s.to_string()).collect(),
            max_restarts: 200,
        }
    }
}

impl WorldBounds {
    pub fn camera(&self) -> CameraRig {
        let intrinsics = CameraIntrinsics::from_hfov(self.image_size, self.image_size, self.hfov_deg)
            .expect("bounds give a valid camera");
        // pitch down: forward gains a +y (downward) component
        let rot = axis_angle(&Vec3::x(), -self.pitch_deg.to_radians());
        let pose = CameraPose::new(rot, Vec3::new(0.0, -self.camera_height, 0.0)).expect("rotation");
        CameraRig { pose, intrinsics }
    }
}

pub const UP: Vec3 = Vec3::new(0.0, -1.0, 0.0);

impl WorldSpec {
    pub fn obbs(&self) -> Vec<OrientedBox3> {
        self.cuboids.iter().map(|c| c.to_obb(&self.up)).collect()
    }

    pub fn cuboid(&self, instance_id: u32) -> Option<&CuboidSpec> {
        self.cuboids.iter().find(|c| c.instance_id == instance_id)
    }

    /// Ground-truth boxes as a sandbox scene.
    pub fn scene(&self) -> SandboxScene {
        SandboxScene::new(self.obbs(), self.camera, self.up).expect("instance ids are unique")
    }

    /// Labels that occur exactly once.
    pub fn unique_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.cuboids {
            if self.cuboids.iter().filter(|o| o.label == c.label).count() == 1 {
                out.push(c.label.clone());
            }
        }
        out
    }

    pub fn trace(&self, pose: &CameraPose, intrinsics: &CameraIntrinsics, exec: Exec) -> HitMap {
        trace(self, pose, intrinsics, exec)
    }

    /// Analytic frame: flat-shaded RGB, exact depth.
    pub fn view(&self, view_id: ViewId, pose: &CameraPose, intrinsics: &CameraIntrinsics, exec: Exec) -> ViewFrame {
        let hits = self.trace(pose, intrinsics, exec);
        let image = hits.rgb();
        let depth = hits.depth_grid();
        ViewFrame::new(view_id, image, depth, *intrinsics, *pose).expect("dimensions agree by construction")
    }

    pub fn source_view(&self, exec: Exec) -> ViewFrame {
        self.view(ViewId::Source, &self.camera.pose, &self.camera.intrinsics, exec)
    }

    /// One hint per visible cuboid: label plus the mask pixel nearest the
    /// mask centroid, in instance order.
    pub fn source_hints(&self, exec: Exec) -> Vec<(String, [u32; 2])> {
        let hits = self.trace(&self.camera.pose, &self.camera.intrinsics, exec);
        self.cuboids
            .iter()
            .filter_map(|c| {
                let m = hits.mask(c.instance_id as i32, c.instance_id, &c.label);
                central_pixel(&m).map(|px| (c.label.clone(), px))
            })
            .collect()
    }

    pub fn hints_json(&self, exec: Exec) -> String {
        let items: Vec<serde_json::Value> = self
            .source_hints(exec)
            .into_iter()
            .map(|(label, [x, y])| serde_json::json!({"label": label, "x": x, "y": y}))
            .collect();
        serde_json::Value::Array(items).to_string()
    }
}

/// Set pixel nearest the mask centroid; ties to the smaller row-major index.
pub fn central_pixel(m: &InstanceMask) -> Option<[u32; 2]> {
    let px: Vec<(u32, u32)> = m.pixels().collect();
    if px.is_empty() {
        return None;
    }
    let n = px.len() as f64;
    let cx = px.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let cy = px.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    px.iter()
        .min_by(|a, b| {
            let da = (a.0 as f64 - cx).powi(2) + (a.1 as f64 - cy).powi(2);
            let db = (b.0 as f64 - cx).powi(2) + (b.1 as f64 - cy).powi(2);
            da.total_cmp(&db)
        })
        .map(|&(x, y)| [x, y])
}

/// Entry distance of a ray against a box via the slab method.
///
/// `dir` need not be unit length; the returned parameter is in its units.
/// Rays starting inside the box do not hit it.
pub fn ray_obb(origin: &Vec3, dir: &Vec3, b: &OrientedBox3) -> Option<f64> {
    let o = b.local(origin);
    let d = b.axes.transpose() * dir;
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        let h = b.half_extents[i];
        if d[i].abs() < 1e-300 {
            if o[i].abs() > h {
                return None;
            }
            continue;
        }
        let a = (-h - o[i]) / d[i];
        let c = (h - o[i]) / d[i];
        t0 = t0.max(a.min(c));
        t1 = t1.min(a.max(c));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

/// Per-pixel nearest hit: camera-frame depth and what was hit.
#[derive(Debug, Clone, PartialEq)]
pub struct HitMap {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
    /// Cuboid instance id, [`HIT_GROUND`] or [`HIT_NONE`].
    pub hit: Vec<i32>,
}

impl HitMap {
    pub fn depth_grid(&self) -> DepthGrid {
        let values = self
            .depth
            .iter()
            .map(|&d| if d.is_finite() { d as f32 } else { f32::NAN })
            .collect();
        DepthGrid::new(self.width, self.height, values).expect("length matches")
    }

    pub fn mask(&self, code: i32, object_id: u32, label: &str) -> InstanceMask {
        let bits = self.hit.iter().map(|&h| h == code).collect();
        InstanceMask {
            width: self.width,
            height: self.height,
            bits,
            object_id,
            label: label.to_string(),
        }
    }

    pub fn rgb(&self) -> Raster {
        let mut r = Raster::new(self.width, self.height, SKY_COLOR);
        for (i, &h) in self.hit.iter().enumerate() {
            let c = match h {
                HIT_GROUND => GROUND_COLOR,
                HIT_NONE => continue,
                id => palette_color(id as u32).1,
            };
            r.put(i as u32 % self.width, i as u32 / self.width, c);
        }
        r
    }
}

/// Ray casts every pixel against all cuboids and the ground plane.
pub fn trace(world: &WorldSpec, pose: &CameraPose, k: &CameraIntrinsics, exec: Exec) -> HitMap {
    let boxes = world.obbs();
    let up = world.up;
    let origin = *pose.translation();
    let rot = *pose.rotation();
    let w = k.width as usize;
    let mut buf = vec![(f64::INFINITY, HIT_NONE); k.pixel_count()];
    for_each_row(exec, &mut buf, w, |y, row| {
        for (x, cell) in row.iter_mut().enumerate() {
            // camera-frame ray with unit z, so the hit parameter is depth
            let d_cam = Vec3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let dir = rot * d_cam;
            let mut best = (f64::INFINITY, HIT_NONE);
            for b in &boxes {
                if let Some(t) = ray_obb(&origin, &dir, b) {
                    if t < best.0 {
                        best = (t, b.instance_id as i32);
                    }
                }
            }
            if world.ground {
                let denom = up.dot(&dir);
                if denom.abs() > 1e-300 {
                    let t = -up.dot(&origin) / denom;
                    if t > 0.0 && t < best.0 {
                        best = (t, HIT_GROUND);
                    }
                }
            }
            *cell = best;
        }
    });
    HitMap {
        width: k.width,
        height: k.height,
        depth: buf.iter().map(|c| c.0).collect(),
        hit: buf.iter().map(|c| c.1).collect(),
    }
}

pub fn render_depth(world: &WorldSpec, pose: &CameraPose, intrinsics: &CameraIntrinsics, exec: Exec) -> DepthGrid {
    trace(world, pose, intrinsics, exec).depth_grid()
}

/// Pixels where `instance_id` is the nearest hit.
pub fn render_instance_mask(
    world: &WorldSpec,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    instance_id: u32,
    exec: Exec,
) -> Result<InstanceMask, WorldError> {
    let c = world.cuboid(instance_id).ok_or(WorldError::UnknownInstance(instance_id))?;
    Ok(trace(world, pose, intrinsics, exec).mask(instance_id as i32, instance_id, &c.label))
}

/// Minimal gap test between yawed footprints: both rectangles grown by
/// half the clearance must be disjoint (separating axis test).
fn footprints_clear(a: &OrientedBox3, b: &OrientedBox3, up: &Vec3, clearance: f64) -> bool {
    let ground = |v: Vec3| v - up * up.dot(&v);
    let rect = |o: &OrientedBox3| {
        let c = ground(o.center);
        let u = ground(o.axis(0)).normalize();
        let v = ground(o.axis(2)).normalize();
        (c, [u, v], [o.half_extents[0] + clearance / 2.0, o.half_extents[2] + clearance / 2.0])
    };
    let (ca, ax_a, ha) = rect(a);
    let (cb, ax_b, hb) = rect(b);
    let d = cb - ca;
    for axis in ax_a.iter().chain(ax_b.iter()) {
        let ra = ha[0] * ax_a[0].dot(axis).abs() + ha[1] * ax_a[1].dot(axis).abs();
        let rb = hb[0] * ax_b[0].dot(axis).abs() + hb[1] * ax_b[1].dot(axis).abs();
        if d.dot(axis).abs() > ra + rb {
            return true;
        }
    }
    false
}

fn in_frustum(b: &OrientedBox3, rig: &CameraRig, margin: f64) -> bool {
    let k = &rig.intrinsics;
    box_corners(b).iter().all(|p| match project(p, k, &rig.pose) {
        Ok(pr) => {
            pr.depth > 0.1
                && pr.pixel[0] >= margin
                && pr.pixel[1] >= margin
                && pr.pixel[0] <= k.width as f64 - 1.0 - margin
                && pr.pixel[1] <= k.height as f64 - 1.0 - margin
        }
        Err(_) => false,
    })
}

/// Deterministic rejection-sampled world of `k` resting cuboids.
pub fn generate_world(seed: u64, k: usize, bounds: &WorldBounds) -> Result<WorldSpec, WorldError> {
    if !(1..=8).contains(&k) {
        return Err(WorldError::ObjectCount(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = bounds.camera();
    let up = UP;
    'restart: for _ in 0..bounds.max_restarts {
        let mut cuboids: Vec<CuboidSpec> = Vec::with_capacity(k);
        let mut boxes: Vec<OrientedBox3> = Vec::with_capacity(k);
        for id in 0..k as u32 {
            let mut placed = false;
            for _ in 0..200 {
                let size = Vec3::new(
                    rng.random_range(bounds.size.0..=bounds.size.1),
                    rng.random_range(bounds.size.0..=bounds.size.1),
                    rng.random_range(bounds.size.0..=bounds.size.1),
                );
                let yaw_deg = rng.random_range(0.0..90.0);
                let x = rng.random_range(bounds.x.0..=bounds.x.1);
                let z = rng.random_range(bounds.z.0..=bounds.z.1);
                let label = bounds.vocabulary[rng.random_range(0..bounds.vocabulary.len())].clone();
                let spec = CuboidSpec {
                    center: Vec3::new(x, -size.y / 2.0, z),
                    yaw_deg,
                    size,
                    label,
                    instance_id: id,
                };
                let obb = spec.to_obb(&up);
                if !in_frustum(&obb, &camera, bounds.margin_px) {
                    continue;
                }
                if boxes.iter().any(|o| !footprints_clear(o, &obb, &up, bounds.clearance)) {
                    continue;
                }
                cuboids.push(spec);
                boxes.push(obb);
                placed = true;
                break;
            }
            if !placed {
                continue 'restart;
            }
        }
        let world = WorldSpec {
            seed,
            cuboids,
            camera,
            up,
            ground: true,
        };
        if bounds.min_visible > 0.0 && !visible_enough(&world, bounds.min_visible) {
            continue;
        }
        return Ok(world);
    }
    Err(WorldError::Generation { seed, k })
}

/// Every cuboid keeps at least `frac` of its own silhouette in the input view.
fn visible_enough(world: &WorldSpec, frac: f64) -> bool {
    let k = world.camera.intrinsics;
    // a quarter-resolution check is enough to reject heavy occlusion
    let small = CameraIntrinsics::new(k.fx / 4.0, k.fy / 4.0, k.cx / 4.0, k.cy / 4.0, k.width / 4, k.height / 4)
        .expect("scaled camera");
    let all = trace(world, &world.camera.pose, &small, Exec::Sequential);
    world.cuboids.iter().all(|c| {
        let alone = WorldSpec {
            cuboids: vec![c.clone()],
            ground: false,
            ..world.clone()
        };
        let solo = trace(&alone, &world.camera.pose, &small, Exec::Sequential);
        let id = c.instance_id as i32;
        let full = solo.hit.iter().filter(|&&h| h == id).count();
        let seen = all.hit.iter().filter(|&&h| h == id).count();
        full > 0 && seen as f64 >= frac * full as f64
    })
}

/// Rotates the whole world, camera included, about the up axis through the origin.
pub fn rotate_about_up(world: &WorldSpec, angle_deg: f64) -> WorldSpec {
    let r = axis_angle(&world.up, angle_deg.to_radians());
    let cuboids = world
        .cuboids
        .iter()
        .map(|c| CuboidSpec {
            center: r * c.center,
            yaw_deg: c.yaw_deg + angle_deg,
            ..c.clone()
        })
        .collect();
    let pose = CameraPose::new(r * world.camera.pose.rotation(), r * world.camera.pose.translation())
        .expect("product of rotations");
    WorldSpec {
        cuboids,
        camera: CameraRig {
            pose,
            intrinsics: world.camera.intrinsics,
        },
        ..world.clone()
    }
}
