//! Sandbox boxes as a compact JSON text prompt.

use serde::{Deserialize, Serialize};

use crate::geometry::SandboxScene;
use crate::Vec3;

pub const FRAME_NOTE: &str = "origin camera: x right, y down, z forward; meters; yaw_deg about up, 0 = box axis along x, positive turns toward z";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordBox {
    pub label: String,
    pub instance_id: u32,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextCoords {
    pub frame: String,
    /// Up direction in the origin camera frame.
    pub up: [f64; 3],
    pub boxes: Vec<CoordBox>,
}

fn q(v: f64, scale: f64) -> f64 {
    let r = (v * scale).round() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn q2(v: f64) -> f64 {
    q(v, 100.0)
}

/// (right, ground-forward, up) unit vectors in the camera frame.
fn level_axes(up: &Vec3) -> [Vec3; 3] {
    let up = up.normalize();
    let z = Vec3::z();
    let mut f = z - up * up.dot(&z);
    if f.norm() < 1e-9 {
        f = -Vec3::y() - up * -up.y;
    }
    let f = f.normalize();
    [f.cross(&up), f, up]
}

/// Folds an angle in degrees into (-90, 90].
fn fold_half_turn(deg: f64) -> f64 {
    let mut d = deg % 180.0;
    if d <= -90.0 {
        d += 180.0;
    } else if d > 90.0 {
        d -= 180.0;
    }
    d
}

pub fn text_coords(scene: &SandboxScene) -> TextCoords {
    let pose = &scene.origin.pose;
    let up_cam = pose.rotation().transpose() * scene.up_axis;
    let [r, f, upn] = level_axes(&up_cam);
    let mut boxes: Vec<CoordBox> = scene
        .boxes
        .iter()
        .map(|b| {
            let c = pose.to_camera(&b.center);
            // first principal axis that is not (near) vertical
            let axis = (0..3)
                .map(|i| pose.rotation().transpose() * b.axis(i))
                .find(|a| a.dot(&upn).abs() < 0.9)
                .unwrap_or_else(|| pose.rotation().transpose() * b.axis(0));
            let yaw = axis.dot(&f).atan2(axis.dot(&r)).to_degrees();
            CoordBox {
                label: b.label.clone(),
                instance_id: b.instance_id,
                center: [q2(c.x), q2(c.y), q2(c.z)],
                size: [q2(2.0 * b.half_extents.x), q2(2.0 * b.half_extents.y), q2(2.0 * b.half_extents.z)],
                yaw_deg: q(fold_half_turn(yaw), 10.0),
            }
        })
        .collect();
    boxes.sort_by_key(|b| b.instance_id);
    TextCoords {
        frame: FRAME_NOTE.to_string(),
        up: [q(up_cam.x, 1e4), q(up_cam.y, 1e4), q(up_cam.z, 1e4)],
        boxes,
    }
}

pub fn serialize_text_coords(scene: &SandboxScene) -> String {
    serde_json::to_string(&text_coords(scene)).expect("plain data serializes")
}

pub fn parse_text_coords(text: &str) -> Result<TextCoords, serde_json::Error> {
    serde_json::from_str(text)
}

impl TextCoords {
    /// Box centers as (right, ground-forward, up) offsets from the camera.
    pub fn level_positions(&self) -> Vec<(String, Vec3)> {
        let [r, f, u] = level_axes(&Vec3::from(self.up));
        self.boxes
            .iter()
            .map(|b| {
                let c = Vec3::from(b.center);
                (b.label.clone(), Vec3::new(c.dot(&r), c.dot(&f), c.dot(&u)))
            })
            .collect()
    }
}
