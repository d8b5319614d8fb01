//! Pinhole camera math and the value types shared by every stage.
//!
//! Conventions: camera frame is x-right, y-down, z-forward. Poses are stored
//! camera-to-world (`p_world = R * p_cam + t`). Depth is camera-frame Z, not
//! ray length; invalid depth is any non-finite or non-positive value.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::raster::Raster;
use crate::{Mat3, Vec3};

/// Orthonormality / determinant tolerance for rotation matrices.
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("depth {0} is not a finite positive value")]
    InvalidDepth(f64),
    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("point is behind the camera (camera-frame z = {0})")]
    BehindCamera(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("duplicate instance id {0}")]
    DuplicateInstance(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRepr")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Deserialize)]
struct IntrinsicsRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl TryFrom<IntrinsicsRepr> for CameraIntrinsics {
    type Error = GeometryError;
    fn try_from(r: IntrinsicsRepr) -> Result<Self, Self::Error> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !(fx.is_finite() && fx > 0.0 && fy.is_finite() && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics("zero image size".into()));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Square pixels, principal point at the image center, given horizontal FOV.
    pub fn from_hfov(width: u32, height: u32, hfov_deg: f64) -> Result<Self, GeometryError> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "horizontal fov {hfov_deg} out of (0, 180)"
            )));
        }
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera-frame ray through pixel `(x, y)` scaled to unit Z.
    pub fn ray(&self, x: f64, y: f64) -> Vec3 {
        Vec3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Mat3,
    translation: Vec3,
}

impl CameraPose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("pose translation"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// Viewing direction (+z of the camera) in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn to_world(&self, p_cam: &Vec3) -> Vec3 {
        self.rotation * p_cam + self.translation
    }

    pub fn to_camera(&self, p_world: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p_world - self.translation)
    }

    /// `self ∘ rel`: `rel` expressed in this camera's frame.
    pub fn compose(&self, rel: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: self.rotation * rel.rotation,
            translation: self.rotation * rel.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> CameraPose {
        let rt = self.rotation.transpose();
        CameraPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// 4x4 row-major homogeneous matrix.
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x, //
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y, //
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z, //
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_row_major(m: &[f64]) -> Result<Self, GeometryError> {
        if m.len() != 16 {
            return Err(GeometryError::DimensionMismatch(format!(
                "pose needs 16 values, got {}",
                m.len()
            )));
        }
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(GeometryError::InvalidRotation(
                "last row must be [0, 0, 0, 1]".into(),
            ));
        }
        let rotation = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        CameraPose::new(rotation, Vec3::new(m[3], m[7], m[11]))
    }
}

pub(crate) fn check_rotation(r: &Mat3) -> Result<(), GeometryError> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite("rotation"));
    }
    let err = (r.transpose() * r - Mat3::identity()).abs().max();
    if err > ROTATION_TOL {
        return Err(GeometryError::InvalidRotation(format!(
            "R^T R deviates from identity by {err:e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOL {
        return Err(GeometryError::InvalidRotation(format!("det = {det}")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Serialize for CameraPose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseRepr {
            rotation: mat_rows(&self.rotation),
            translation: self.translation.into(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CameraPose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        CameraPose::new(mat_from_rows(&r.rotation), Vec3::from(r.translation))
            .map_err(serde::de::Error::custom)
    }
}

pub(crate) fn mat_rows(m: &Mat3) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

pub(crate) fn mat_from_rows(r: &[[f64; 3]; 3]) -> Mat3 {
    Mat3::new(
        r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
    )
}

/// Pose plus intrinsics of one camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
}

/// Per-pixel camera-frame depth in meters, row-major.
/// Equality is bitwise, so invalid (NaN) pixels compare equal.
#[derive(Debug, Clone)]
pub struct DepthGrid {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl PartialEq for DepthGrid {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl DepthGrid {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, GeometryError> {
        if values.len() != width as usize * height as usize {
            return Err(GeometryError::DimensionMismatch(format!(
                "depth length {} != {width}x{height}",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self {
            width,
            height,
            values: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Valid depth at integer pixel, `None` when non-finite, non-positive or out of range.
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let d = self.values[y as usize * self.width as usize + x as usize];
        (d.is_finite() && d > 0.0).then_some(d as f64)
    }
}

/// Identifies where a frame came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViewId {
    /// The original input image.
    Source,
    /// Frame `step` of candidate trajectory `trajectory`.
    Generated { trajectory: u32, step: u32 },
}

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViewId::Source => f.write_str("source"),
            ViewId::Generated { trajectory, step } => write!(f, "m{trajectory}_t{step}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ViewIdRepr {
    Tag(String),
    Indexed { m: u32, t: u32 },
}

impl Serialize for ViewId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            ViewId::Source => ViewIdRepr::Tag("source".into()),
            ViewId::Generated { trajectory, step } => ViewIdRepr::Indexed {
                m: trajectory,
                t: step,
            },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ViewId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match ViewIdRepr::deserialize(d)? {
            ViewIdRepr::Tag(t) if t == "source" => Ok(ViewId::Source),
            ViewIdRepr::Tag(t) => Err(serde::de::Error::custom(format!("unknown view tag {t:?}"))),
            ViewIdRepr::Indexed { m, t } => Ok(ViewId::Generated {
                trajectory: m,
                step: t,
            }),
        }
    }
}

/// One observed or synthesized view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFrame {
    pub view_id: ViewId,
    pub image: Raster,
    pub depth: DepthGrid,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

impl ViewFrame {
    pub fn new(
        view_id: ViewId,
        image: Raster,
        depth: DepthGrid,
        intrinsics: CameraIntrinsics,
        pose: CameraPose,
    ) -> Result<Self, GeometryError> {
        let dims = (intrinsics.width, intrinsics.height);
        if (image.width(), image.height()) != dims || (depth.width(), depth.height()) != dims {
            return Err(GeometryError::DimensionMismatch(format!(
                "view {view_id}: image {}x{}, depth {}x{}, intrinsics {}x{}",
                image.width(),
                image.height(),
                depth.width(),
                depth.height(),
                dims.0,
                dims.1
            )));
        }
        Ok(Self {
            view_id,
            image,
            depth,
            intrinsics,
            pose,
        })
    }

    pub fn rig(&self) -> CameraRig {
        CameraRig {
            pose: self.pose,
            intrinsics: self.intrinsics,
        }
    }
}

/// Binary per-object mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
    pub object_id: u32,
    pub label: String,
}

impl InstanceMask {
    pub fn empty(width: u32, height: u32, object_id: u32, label: impl Into<String>) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
            object_id,
            label: label.into(),
        }
    }

    pub fn from_bits(
        width: u32,
        height: u32,
        bits: Vec<bool>,
        object_id: u32,
        label: impl Into<String>,
    ) -> Result<Self, GeometryError> {
        if bits.len() != width as usize * height as usize {
            return Err(GeometryError::DimensionMismatch(format!(
                "mask length {} != {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
            object_id,
            label: label.into(),
        })
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Set pixels as `(x, y)` in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }
}

/// A single lifted 3D sample with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyPoint {
    pub xyz: Vec3,
    pub object_id: u32,
    /// Object category; voting and clustering group by this.
    pub label: String,
    pub view_id: ViewId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProxyCloud {
    pub points: Vec<ProxyPoint>,
}

impl ProxyCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, p: ProxyPoint) -> Result<(), GeometryError> {
        if !p.xyz.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("proxy point"));
        }
        self.points.push(p);
        Ok(())
    }

    pub fn extend(&mut self, other: ProxyCloud) {
        self.points.extend(other.points);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Oriented box: `axes` columns are the unit principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBox3 {
    pub center: Vec3,
    pub axes: Mat3,
    pub half_extents: Vec3,
    pub label: String,
    pub instance_id: u32,
}

impl OrientedBox3 {
    pub fn new(
        center: Vec3,
        axes: Mat3,
        half_extents: Vec3,
        label: impl Into<String>,
        instance_id: u32,
    ) -> Result<Self, GeometryError> {
        check_rotation(&axes)?;
        if !center.iter().chain(half_extents.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("box"));
        }
        if half_extents.iter().any(|h| *h < 0.0) {
            return Err(GeometryError::DimensionMismatch(
                "negative half extent".into(),
            ));
        }
        Ok(Self {
            center,
            axes,
            half_extents,
            label: label.into(),
            instance_id,
        })
    }

    pub fn axis(&self, i: usize) -> Vec3 {
        self.axes.column(i).into_owned()
    }

    /// Coordinates of `p` in the box frame (relative to center).
    pub fn local(&self, p: &Vec3) -> Vec3 {
        self.axes.transpose() * (p - self.center)
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        let l = self.local(p);
        (0..3).all(|i| l[i].abs() <= self.half_extents[i] + tol)
    }
}

#[derive(Serialize, Deserialize)]
struct BoxRepr {
    label: String,
    instance_id: u32,
    center: [f64; 3],
    axes: [[f64; 3]; 3],
    half_extents: [f64; 3],
}

impl Serialize for OrientedBox3 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        BoxRepr {
            label: self.label.clone(),
            instance_id: self.instance_id,
            center: self.center.into(),
            axes: mat_rows(&self.axes),
            half_extents: self.half_extents.into(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OrientedBox3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = BoxRepr::deserialize(d)?;
        OrientedBox3::new(
            Vec3::from(r.center),
            mat_from_rows(&r.axes),
            Vec3::from(r.half_extents),
            r.label,
            r.instance_id,
        )
        .map_err(serde::de::Error::custom)
    }
}

/// The abstract box scene handed to rendering and prompting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandboxScene {
    pub boxes: Vec<OrientedBox3>,
    pub origin: CameraRig,
    pub up_axis: Vec3,
}

#[derive(Deserialize)]
struct SceneRepr {
    boxes: Vec<OrientedBox3>,
    origin: CameraRig,
    up_axis: Vec3,
}

impl<'de> Deserialize<'de> for SandboxScene {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = SceneRepr::deserialize(d)?;
        SandboxScene::new(r.boxes, r.origin, r.up_axis).map_err(serde::de::Error::custom)
    }
}

impl SandboxScene {
    pub fn new(
        boxes: Vec<OrientedBox3>,
        origin: CameraRig,
        up_axis: Vec3,
    ) -> Result<Self, GeometryError> {
        let mut seen = HashSet::new();
        for b in &boxes {
            if !seen.insert(b.instance_id) {
                return Err(GeometryError::DuplicateInstance(b.instance_id));
            }
        }
        let n = up_axis.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(GeometryError::NonFinite("up axis"));
        }
        Ok(Self {
            boxes,
            origin,
            up_axis: up_axis / n,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Pixel position plus camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: [f64; 2],
    pub depth: f64,
}

/// Lifts pixel `(x, y)` at camera-frame depth `depth` into the world frame.
pub fn backproject(
    pixel: [f64; 2],
    depth: f64,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Vec3, GeometryError> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(GeometryError::InvalidDepth(depth));
    }
    let [x, y] = pixel;
    if !intr.contains(x, y) {
        return Err(GeometryError::OutOfBounds {
            x,
            y,
            width: intr.width,
            height: intr.height,
        });
    }
    Ok(pose.to_world(&(intr.ray(x, y) * depth)))
}

/// Projects a world point; inverse of [`backproject`] on its image.
pub fn project(
    p: &Vec3,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Projection, GeometryError> {
    let c = pose.to_camera(p);
    if !(c.z > 0.0) {
        return Err(GeometryError::BehindCamera(c.z));
    }
    Ok(Projection {
        pixel: [intr.fx * c.x / c.z + intr.cx, intr.fy * c.y / c.z + intr.cy],
        depth: c.z,
    })
}

/// Eight corners; corner `k` takes `+half_extent[i]` on axis `i` when bit `i`
/// of `k` is set, `-half_extent[i]` otherwise.
pub fn box_corners(b: &OrientedBox3) -> [Vec3; 8] {
    std::array::from_fn(|k| {
        let mut p = b.center;
        for i in 0..3 {
            let s = if k >> i & 1 == 1 { 1.0 } else { -1.0 };
            p += b.axis(i) * (s * b.half_extents[i]);
        }
        p
    })
}

/// Corner index pairs forming the 12 box edges.
pub const BOX_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Rotation by `angle` radians about unit `axis` (Rodrigues).
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    let k = Mat3::new(
        0.0, -axis.z, axis.y, //
        axis.z, 0.0, -axis.x, //
        -axis.y, axis.x, 0.0,
    );
    let (s, c) = angle.sin_cos();
    Mat3::identity() + k * s + k * k * (1.0 - c)
}
