//! Deterministic software rendering of sandbox boxes and proxy clouds.
//!
//! Boxes are drawn as 12-edge wireframes with integer line rasterization,
//! far-to-near so nearer boxes overdraw. Labels are not rasterized; each
//! render returns a color legend that goes into the prompt text instead.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    box_corners, CameraIntrinsics, CameraPose, ProxyCloud, SandboxScene, BOX_EDGES,
};
use crate::raster::{Raster, Rgb};
use crate::{Mat3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("cannot place a top-down camera over an empty sandbox")]
    EmptySandbox,
}

/// Near clipping plane for perspective renders, meters.
pub const NEAR_PLANE: f64 = 0.05;

pub const PALETTE: [(&str, Rgb); 12] = [
    ("red", [230, 25, 75]),
    ("green", [60, 180, 75]),
    ("blue", [0, 130, 200]),
    ("yellow", [255, 225, 25]),
    ("orange", [245, 130, 48]),
    ("purple", [145, 30, 180]),
    ("cyan", [70, 240, 240]),
    ("magenta", [240, 50, 230]),
    ("lime", [210, 245, 60]),
    ("pink", [250, 190, 212]),
    ("teal", [0, 128, 128]),
    ("brown", [170, 110, 40]),
];

pub const MARKER_COLOR: Rgb = [255, 255, 255];
pub const GRID_COLOR: Rgb = [72, 72, 72];

pub fn palette_color(index: u32) -> (&'static str, Rgb) {
    PALETTE[index as usize % PALETTE.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    pub width: u32,
    pub height: u32,
    pub background: Rgb,
    pub line_width: u32,
    /// Ground-plane grid with 1 m spacing.
    pub draw_axes: bool,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            background: [0, 0, 0],
            line_width: 1,
            draw_axes: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Projection {
    Perspective { intrinsics: CameraIntrinsics },
    /// Square pixels of `meters_per_px`, optical axis through the image center.
    Orthographic {
        width: u32,
        height: u32,
        meters_per_px: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderCamera {
    pub pose: CameraPose,
    pub projection: Projection,
    /// Camera whose position is drawn as a marker in orthographic renders.
    #[serde(default)]
    pub marker: Option<CameraPose>,
}

impl RenderCamera {
    pub fn perspective(pose: CameraPose, intrinsics: CameraIntrinsics) -> Self {
        Self {
            pose,
            projection: Projection::Perspective { intrinsics },
            marker: None,
        }
    }

    /// Camera-frame point to continuous pixel coordinates.
    fn to_pixel(&self, c: &Vec3) -> [f64; 2] {
        match self.projection {
            Projection::Perspective { intrinsics: k } => {
                [k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy]
            }
            Projection::Orthographic {
                width,
                height,
                meters_per_px,
            } => [
                width as f64 / 2.0 + c.x / meters_per_px,
                height as f64 / 2.0 + c.y / meters_per_px,
            ],
        }
    }

    fn near(&self) -> f64 {
        match self.projection {
            Projection::Perspective { .. } => NEAR_PLANE,
            Projection::Orthographic { .. } => f64::NEG_INFINITY,
        }
    }

    /// World point to pixel and camera depth; `None` in front of the near plane.
    pub fn project(&self, p: &Vec3) -> Option<([f64; 2], f64)> {
        let c = self.pose.to_camera(p);
        (c.z >= self.near()).then(|| (self.to_pixel(&c), c.z))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub color: String,
    pub label: String,
    pub instance_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub image: Raster,
    pub camera: RenderCamera,
    pub legend: Vec<LegendEntry>,
}

/// Same orientation as `origin`, moved `distance` back along its viewing axis.
pub fn stepback_camera(origin: &CameraPose, distance: f64) -> CameraPose {
    assert!(distance >= 0.0, "step-back distance must be non-negative");
    CameraPose::new(
        *origin.rotation(),
        origin.translation() - origin.forward() * distance,
    )
    .expect("origin rotation already validated")
}

fn ground_basis(origin: &CameraPose, up: &Vec3) -> (Vec3, Vec3, Vec3) {
    let up = up.normalize();
    let fwd = origin.forward();
    let mut f = fwd - up * up.dot(&fwd);
    if f.norm() < 1e-9 {
        f = Vec3::x() - up * up.x;
        if f.norm() < 1e-9 {
            f = Vec3::y() - up * up.y;
        }
    }
    let f = f.normalize();
    let right = f.cross(&up);
    (f, right, up)
}

/// Orthographic bird's-eye camera over the scene.
///
/// Centered above the midpoint of the boxes' ground-plane extent, `margin`
/// above the highest box corner, looking along `-up`, with image-up equal to
/// the origin camera's forward direction on the ground. The footprint covers
/// every box and the origin camera with 10% padding.
pub fn topdown_camera(
    scene: &SandboxScene,
    margin: f64,
    width: u32,
    height: u32,
) -> Result<RenderCamera, RenderError> {
    let corners: Vec<Vec3> = scene.boxes.iter().flat_map(box_corners).collect();
    topdown_camera_over(&corners, &scene.origin.pose, &scene.up_axis, margin, width, height)
}

/// [`topdown_camera`] framing an arbitrary point set instead of boxes.
pub fn topdown_camera_over(
    points: &[Vec3],
    origin: &CameraPose,
    up: &Vec3,
    margin: f64,
    width: u32,
    height: u32,
) -> Result<RenderCamera, RenderError> {
    if points.is_empty() {
        return Err(RenderError::EmptySandbox);
    }
    let (f, r, up) = ground_basis(origin, up);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    let mut top = f64::NEG_INFINITY;
    for c in points {
        let (u, v) = (c.dot(&r), c.dot(&f));
        lo = [lo[0].min(u), lo[1].min(v)];
        hi = [hi[0].max(u), hi[1].max(v)];
        top = top.max(c.dot(&up));
    }
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let cam = origin.center();
    let mut half_u: f64 = 0.0;
    let mut half_v: f64 = 0.0;
    for p in points.iter().chain(std::iter::once(&cam)) {
        half_u = half_u.max((p.dot(&r) - mid[0]).abs());
        half_v = half_v.max((p.dot(&f) - mid[1]).abs());
    }
    let half_u = (half_u * 1.1).max(0.5);
    let half_v = (half_v * 1.1).max(0.5);
    let meters_per_px = (2.0 * half_u / width as f64).max(2.0 * half_v / height as f64);
    let center = r * mid[0] + f * mid[1] + up * (top + margin);
    // camera z = -up, camera y (image down) = -forward, camera x = right
    let rot = Mat3::from_columns(&[r, -f, -up]);
    let pose = CameraPose::new(rot, center).expect("ground basis is orthonormal");
    Ok(RenderCamera {
        pose,
        projection: Projection::Orthographic {
            width,
            height,
            meters_per_px,
        },
        marker: Some(*origin),
    })
}

struct Canvas<'a> {
    raster: &'a mut Raster,
    brush: u32,
}

impl Canvas<'_> {
    fn dot(&mut self, x: i64, y: i64, c: Rgb) {
        let b = self.brush.max(1) as i64;
        let off = (b - 1) / 2;
        for dy in 0..b {
            for dx in 0..b {
                self.raster.put_clipped(x - off + dx, y - off + dy, c);
            }
        }
    }

    /// Bresenham between rounded endpoints; both already viewport-clipped.
    fn line(&mut self, a: [f64; 2], b: [f64; 2], c: Rgb) {
        let (mut x0, mut y0) = (a[0].round() as i64, a[1].round() as i64);
        let (x1, y1) = (b[0].round() as i64, b[1].round() as i64);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.dot(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }
}

/// Liang–Barsky clip of a 2D segment to `[lo, hi]` on both axes.
fn clip_2d(a: [f64; 2], b: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> Option<([f64; 2], [f64; 2])> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for i in 0..2 {
        for (p, q) in [(-d[i], a[i] - lo[i]), (d[i], hi[i] - a[i])] {
            if p == 0.0 {
                if q < 0.0 {
                    return None;
                }
            } else {
                let t = q / p;
                if p < 0.0 {
                    t0 = t0.max(t);
                } else {
                    t1 = t1.min(t);
                }
            }
        }
    }
    (t0 <= t1).then(|| {
        (
            [a[0] + t0 * d[0], a[1] + t0 * d[1]],
            [a[0] + t1 * d[0], a[1] + t1 * d[1]],
        )
    })
}

/// Clips a world segment against the near plane, projects and viewport-clips it.
fn project_segment(cam: &RenderCamera, a: &Vec3, b: &Vec3, w: u32, h: u32) -> Option<([f64; 2], [f64; 2])> {
    let (mut ca, mut cb) = (cam.pose.to_camera(a), cam.pose.to_camera(b));
    let near = cam.near();
    if ca.z < near && cb.z < near {
        return None;
    }
    if ca.z < near || cb.z < near {
        let t = (near - ca.z) / (cb.z - ca.z);
        let p = ca + (cb - ca) * t;
        if ca.z < near {
            ca = p;
        } else {
            cb = p;
        }
    }
    let (pa, pb) = (cam.to_pixel(&ca), cam.to_pixel(&cb));
    if !(pa.iter().chain(pb.iter()).all(|v| v.is_finite())) {
        return None;
    }
    clip_2d(pa, pb, [-0.5, -0.5], [w as f64 - 0.5, h as f64 - 0.5])
}

fn draw_marker(canvas: &mut Canvas, cam: &RenderCamera, origin: &CameraPose, up: &Vec3) {
    let c = cam.pose.to_camera(&origin.center());
    let fwd = origin.forward();
    let mut f = fwd - up * up.dot(&fwd);
    if f.norm() < 1e-9 {
        f = cam.pose.rotation().column(1).into_owned() * -1.0;
    }
    let fc = cam.pose.rotation().transpose() * f.normalize();
    let center = cam.to_pixel(&c);
    let dir = {
        let n = (fc.x * fc.x + fc.y * fc.y).sqrt();
        if n < 1e-9 {
            [0.0, -1.0]
        } else {
            [fc.x / n, fc.y / n]
        }
    };
    let perp = [-dir[1], dir[0]];
    let len = 12.0;
    let tri = [
        [center[0] + dir[0] * len * 2.0 / 3.0, center[1] + dir[1] * len * 2.0 / 3.0],
        [
            center[0] - dir[0] * len / 3.0 + perp[0] * len / 2.0,
            center[1] - dir[1] * len / 3.0 + perp[1] * len / 2.0,
        ],
        [
            center[0] - dir[0] * len / 3.0 - perp[0] * len / 2.0,
            center[1] - dir[1] * len / 3.0 - perp[1] * len / 2.0,
        ],
    ];
    fill_triangle(canvas.raster, &tri, MARKER_COLOR);
}

fn fill_triangle(r: &mut Raster, t: &[[f64; 2]; 3], c: Rgb) {
    let edge = |a: [f64; 2], b: [f64; 2], p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let area = edge(t[0], t[1], t[2]);
    if area == 0.0 {
        return;
    }
    let xmin = t.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min).floor().max(0.0) as i64;
    let xmax = t.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max).ceil().min(r.width() as f64 - 1.0) as i64;
    let ymin = t.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min).floor().max(0.0) as i64;
    let ymax = t.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max).ceil().min(r.height() as f64 - 1.0) as i64;
    for y in ymin..=ymax {
        for x in xmin..=xmax {
            let p = [x as f64, y as f64];
            let w = [edge(t[1], t[2], p), edge(t[2], t[0], p), edge(t[0], t[1], p)];
            if w.iter().all(|v| v * area >= 0.0) {
                r.put_clipped(x, y, c);
            }
        }
    }
}

fn draw_grid(canvas: &mut Canvas, cam: &RenderCamera, scene: &SandboxScene, w: u32, h: u32) {
    let (f, r, up) = ground_basis(&scene.origin.pose, &scene.up_axis);
    let pts: Vec<Vec3> = scene
        .boxes
        .iter()
        .flat_map(|b| box_corners(b))
        .chain(std::iter::once(scene.origin.pose.center()))
        .collect();
    let floor = scene
        .boxes
        .iter()
        .flat_map(|b| box_corners(b))
        .map(|c| c.dot(&up))
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { scene.origin.pose.center().dot(&up) - 1.5 };
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pts {
        let (u, v) = (p.dot(&r), p.dot(&f));
        lo = [lo[0].min(u), lo[1].min(v)];
        hi = [hi[0].max(u), hi[1].max(v)];
    }
    let (u0, u1) = ((lo[0] - 2.0).floor() as i64, (hi[0] + 2.0).ceil() as i64);
    let (v0, v1) = ((lo[1] - 2.0).floor() as i64, (hi[1] + 2.0).ceil() as i64);
    let at = |u: f64, v: f64| r * u + f * v + up * floor;
    for u in u0..=u1 {
        if let Some((a, b)) = project_segment(cam, &at(u as f64, v0 as f64), &at(u as f64, v1 as f64), w, h) {
            canvas.line(a, b, GRID_COLOR);
        }
    }
    for v in v0..=v1 {
        if let Some((a, b)) = project_segment(cam, &at(u0 as f64, v as f64), &at(u1 as f64, v as f64), w, h) {
            canvas.line(a, b, GRID_COLOR);
        }
    }
}

fn image_size(cam: &RenderCamera) -> (u32, u32) {
    match cam.projection {
        Projection::Perspective { intrinsics } => (intrinsics.width, intrinsics.height),
        Projection::Orthographic { width, height, .. } => (width, height),
    }
}

/// Wireframe render of every box in `scene`.
pub fn render_boxes(scene: &SandboxScene, camera: &RenderCamera, style: &RenderStyle) -> RenderedView {
    let (w, h) = image_size(camera);
    let mut raster = Raster::new(w, h, style.background);
    let mut canvas = Canvas {
        raster: &mut raster,
        brush: style.line_width,
    };
    if style.draw_axes {
        draw_grid(&mut canvas, camera, scene, w, h);
    }
    let mut order: Vec<(f64, usize)> = scene
        .boxes
        .iter()
        .enumerate()
        .map(|(i, b)| (camera.pose.to_camera(&b.center).z, i))
        .collect();
    // far to near; equal depth falls back to instance id
    order.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(scene.boxes[a.1].instance_id.cmp(&scene.boxes[b.1].instance_id))
    });
    let mut drawn = BTreeMap::new();
    for (_, i) in order {
        let b = &scene.boxes[i];
        let (name, color) = palette_color(b.instance_id);
        let corners = box_corners(b);
        let mut any = false;
        for (s, e) in BOX_EDGES {
            if let Some((a, bb)) = project_segment(camera, &corners[s], &corners[e], w, h) {
                canvas.line(a, bb, color);
                any = true;
            }
        }
        if any {
            drawn.insert(
                b.instance_id,
                LegendEntry {
                    color: name.to_string(),
                    label: b.label.clone(),
                    instance_id: b.instance_id,
                },
            );
        }
    }
    if let (Some(marker), Projection::Orthographic { .. }) = (camera.marker, camera.projection) {
        draw_marker(&mut canvas, camera, &marker, &scene.up_axis);
    }
    RenderedView {
        image: raster,
        camera: *camera,
        legend: drawn.into_values().collect(),
    }
}

fn splat_all(raster: &mut Raster, camera: &RenderCamera, points: &[(Vec3, Rgb)]) {
    let mut splats: Vec<(f64, usize, [f64; 2])> = points
        .iter()
        .enumerate()
        .filter_map(|(i, (p, _))| camera.project(p).map(|(px, d)| (d, i, px)))
        .collect();
    splats.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i, px) in splats {
        let x0 = (px[0] - 0.5).floor() as i64;
        let y0 = (px[1] - 0.5).floor() as i64;
        for dy in 0..2 {
            for dx in 0..2 {
                raster.put_clipped(x0 + dx, y0 + dy, points[i].1);
            }
        }
    }
}

fn finish_points(mut raster: Raster, camera: &RenderCamera, up_axis: &Vec3, legend: Vec<LegendEntry>) -> RenderedView {
    if let (Some(marker), Projection::Orthographic { .. }) = (camera.marker, camera.projection) {
        let mut canvas = Canvas {
            raster: &mut raster,
            brush: 1,
        };
        draw_marker(&mut canvas, camera, &marker, up_axis);
    }
    RenderedView {
        image: raster,
        camera: *camera,
        legend,
    }
}

/// 2x2 splats of each point, colored by category (sorted label order).
pub fn render_points(cloud: &ProxyCloud, camera: &RenderCamera, style: &RenderStyle, up_axis: &Vec3) -> RenderedView {
    let (w, h) = image_size(camera);
    let mut raster = Raster::new(w, h, style.background);
    let mut categories: BTreeMap<&str, u32> = BTreeMap::new();
    for p in &cloud.points {
        categories.entry(p.label.as_str()).or_insert(0);
    }
    for (i, v) in categories.values_mut().enumerate() {
        *v = i as u32;
    }
    let colored: Vec<(Vec3, Rgb)> = cloud
        .points
        .iter()
        .map(|p| (p.xyz, palette_color(categories[p.label.as_str()]).1))
        .collect();
    splat_all(&mut raster, camera, &colored);
    let legend = categories
        .into_iter()
        .map(|(label, i)| LegendEntry {
            color: palette_color(i).0.to_string(),
            label: label.to_string(),
            instance_id: i,
        })
        .collect();
    finish_points(raster, camera, up_axis, legend)
}

/// 2x2 splats carrying their own colors; no legend.
pub fn render_colored_points(points: &[(Vec3, Rgb)], camera: &RenderCamera, style: &RenderStyle, up_axis: &Vec3) -> RenderedView {
    let (w, h) = image_size(camera);
    let mut raster = Raster::new(w, h, style.background);
    splat_all(&mut raster, camera, points);
    finish_points(raster, camera, up_axis, Vec::new())
}
