//! Scene bundles: a directory of precomputed views, depths and masks.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/views/<id>.png|.ppm     8-bit RGB
//! <dir>/views/<id>.depth        little-endian f32, row-major, no header
//! <dir>/masks/<id>_<object>.pgm binary P5
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_hint, DepthEstimate, DepthEstimator, MultiViewGenerator, ProviderError, Segmenter, StoredDepth};
use crate::elevation::ObjectHint;
use crate::geometry::{CameraIntrinsics, CameraPose, DepthGrid, InstanceMask, ViewFrame, ViewId};
use crate::raster::{decode_mask_pgm, encode_mask_pgm, image_extension, read_image, write_image};
use crate::trajectory::TrajectorySpec;
use crate::Vec3;

pub const MANIFEST: &str = "manifest.json";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsEntry {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub id: ViewId,
    pub image: String,
    pub depth: String,
    pub width: u32,
    pub height: u32,
    pub intrinsics: IntrinsicsEntry,
    /// Camera-to-world, row-major.
    pub pose: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub view: ViewId,
    pub object_id: u32,
    pub label: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up_axis: Option<[f64; 3]>,
    pub views: Vec<ViewEntry>,
    #[serde(default)]
    pub masks: Vec<MaskEntry>,
}

fn default_version() -> u32 {
    BUNDLE_VERSION
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub scene_id: String,
    pub views: BTreeMap<ViewId, ViewFrame>,
    pub masks: BTreeMap<(ViewId, u32), InstanceMask>,
    /// World up direction, if known.
    pub up_axis: Option<Vec3>,
}

impl Bundle {
    pub fn source(&self) -> Option<&ViewFrame> {
        self.views.get(&ViewId::Source)
    }

    /// Up direction in the world frame: the stored one, else the source
    /// camera's `-y` axis.
    pub fn up(&self) -> Vec3 {
        self.up_axis.unwrap_or_else(|| match self.source() {
            Some(v) => v.pose.rotation() * Vec3::new(0.0, -1.0, 0.0),
            None => Vec3::new(0.0, -1.0, 0.0),
        })
    }
}

fn view_stem(id: &ViewId) -> String {
    id.to_string()
}

fn read_depth(path: &Path, width: u32, height: u32) -> Result<DepthGrid, ProviderError> {
    let bytes = fs::read(path).map_err(|e| ProviderError::bundle("depth", format!("{}: {e}", path.display())))?;
    let expected = width as usize * height as usize * 4;
    if bytes.len() != expected {
        return Err(ProviderError::bundle(
            "depth length",
            format!("{}: {} bytes, expected {expected}", path.display(), bytes.len()),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    DepthGrid::new(width, height, values).map_err(|e| ProviderError::bundle("depth length", e.to_string()))
}

fn write_depth(path: &Path, d: &DepthGrid) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(d.values().len() * 4);
    for v in d.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)
}

/// Reads and validates a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<Bundle, ProviderError> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| ProviderError::bundle("manifest", format!("{}: {e}", manifest_path.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| ProviderError::bundle("manifest", e.to_string()))?;
    let mut views = BTreeMap::new();
    for v in &m.views {
        let at = |field: &str| format!("views[{}].{field}", v.id);
        let intrinsics = CameraIntrinsics::new(v.intrinsics.fx, v.intrinsics.fy, v.intrinsics.cx, v.intrinsics.cy, v.width, v.height)
            .map_err(|e| ProviderError::bundle("intrinsics", format!("{}: {e}", at("intrinsics"))))?;
        if v.pose.len() != 16 {
            return Err(ProviderError::bundle("pose", format!("{}: {} values", at("pose"), v.pose.len())));
        }
        let pose = CameraPose::from_row_major(&v.pose).map_err(|e| ProviderError::bundle("pose", format!("{}: {e}", at("pose"))))?;
        let image = read_image(&dir.join(&v.image)).map_err(|e| ProviderError::bundle("image", format!("{}: {e}", v.image)))?;
        let depth = read_depth(&dir.join(&v.depth), v.width, v.height)?;
        let frame = ViewFrame::new(v.id, image, depth, intrinsics, pose).map_err(|e| ProviderError::bundle("image", e.to_string()))?;
        if views.insert(v.id, frame).is_some() {
            return Err(ProviderError::bundle("views", format!("duplicate view {}", v.id)));
        }
    }
    let mut masks = BTreeMap::new();
    for me in &m.masks {
        let Some(view) = views.get(&me.view) else {
            return Err(ProviderError::bundle("mask", format!("mask for unknown view {}", me.view)));
        };
        let bytes = fs::read(dir.join(&me.path)).map_err(|e| ProviderError::bundle("mask", format!("{}: {e}", me.path)))?;
        let mask = decode_mask_pgm(&bytes, me.object_id, &me.label).map_err(|e| ProviderError::bundle("mask", format!("{}: {e}", me.path)))?;
        if (mask.width, mask.height) != (view.intrinsics.width, view.intrinsics.height) {
            return Err(ProviderError::bundle("mask", format!("{}: size differs from view", me.path)));
        }
        masks.insert((me.view, me.object_id), mask);
    }
    let up_axis = match m.up_axis {
        Some(u) => {
            let u = Vec3::from(u);
            if !(u.norm().is_finite() && u.norm() > 0.0) {
                return Err(ProviderError::bundle("up_axis", "zero or non-finite"));
            }
            Some(u.normalize())
        }
        None => None,
    };
    Ok(Bundle {
        scene_id: m.scene_id,
        views,
        masks,
        up_axis,
    })
}

/// Writes `bundle` under `dir`; images use the default raster format.
pub fn write_bundle(bundle: &Bundle, dir: &Path) -> Result<PathBuf, ProviderError> {
    let io = |e: std::io::Error| ProviderError::bundle("io", e.to_string());
    fs::create_dir_all(dir.join("views")).map_err(io)?;
    if !bundle.masks.is_empty() {
        fs::create_dir_all(dir.join("masks")).map_err(io)?;
    }
    let ext = image_extension();
    let mut views = Vec::new();
    for (id, v) in &bundle.views {
        let stem = view_stem(id);
        let image = format!("views/{stem}.{ext}");
        let depth = format!("views/{stem}.depth");
        write_image(&v.image, &dir.join(&image)).map_err(|e| ProviderError::bundle("image", e.to_string()))?;
        write_depth(&dir.join(&depth), &v.depth).map_err(io)?;
        views.push(ViewEntry {
            id: *id,
            image,
            depth,
            width: v.intrinsics.width,
            height: v.intrinsics.height,
            intrinsics: IntrinsicsEntry {
                fx: v.intrinsics.fx,
                fy: v.intrinsics.fy,
                cx: v.intrinsics.cx,
                cy: v.intrinsics.cy,
            },
            pose: v.pose.to_row_major().to_vec(),
        });
    }
    let mut masks = Vec::new();
    for ((view, object_id), m) in &bundle.masks {
        let path = format!("masks/{}_{object_id}.pgm", view_stem(view));
        fs::write(dir.join(&path), encode_mask_pgm(m)).map_err(io)?;
        masks.push(MaskEntry {
            view: *view,
            object_id: *object_id,
            label: m.label.clone(),
            path,
        });
    }
    let manifest = Manifest {
        version: BUNDLE_VERSION,
        scene_id: bundle.scene_id.clone(),
        up_axis: bundle.up_axis.map(Into::into),
        views,
        masks,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST);
    fs::write(&path, text + "\n").map_err(io)?;
    Ok(path)
}

/// Serves a loaded bundle as generator, depth estimator and segmenter.
#[derive(Debug, Clone)]
pub struct BundleProvider {
    bundle: std::sync::Arc<Bundle>,
}

impl BundleProvider {
    pub fn new(bundle: std::sync::Arc<Bundle>) -> Self {
        Self { bundle }
    }

    pub fn bundle(&self) -> &Bundle {
        &self.bundle
    }
}

impl MultiViewGenerator for BundleProvider {
    fn generate_each(&self, _input: &ViewFrame, trajectory: &TrajectorySpec) -> Vec<Result<ViewFrame, ProviderError>> {
        (0..trajectory.poses.len())
            .map(|t| {
                let id = ViewId::Generated {
                    trajectory: trajectory.index as u32,
                    step: t as u32,
                };
                self.bundle.views.get(&id).cloned().ok_or(ProviderError::MissingView {
                    trajectory: trajectory.index as u32,
                    step: t as u32,
                })
            })
            .collect()
    }
}

impl DepthEstimator for BundleProvider {
    fn estimate(&self, frames: &[ViewFrame]) -> Result<Vec<DepthEstimate>, ProviderError> {
        StoredDepth.estimate(frames)
    }
}

impl Segmenter for BundleProvider {
    /// The mask stored for `(view, object_id)` if it covers the hint pixel,
    /// else any stored mask of the view covering it, else the keyed mask.
    fn segment(&self, frame: &ViewFrame, hint: &ObjectHint) -> Result<InstanceMask, ProviderError> {
        check_hint(frame, hint)?;
        let [x, y] = hint.center_px;
        let keyed = self.bundle.masks.get(&(frame.view_id, hint.object_id));
        if let Some(m) = keyed.filter(|m| m.get(x, y)) {
            return Ok(m.clone());
        }
        self.bundle
            .masks
            .range((frame.view_id, 0)..=(frame.view_id, u32::MAX))
            .map(|(_, m)| m)
            .find(|m| m.get(x, y))
            .or(keyed)
            .cloned()
            .ok_or(ProviderError::ObjectNotFound {
                view: frame.view_id,
                pixel: hint.center_px,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;
    use crate::trajectory::{instantiate_trajectories, AbstractMotion, TrajectoryParams};

    fn frame(id: ViewId, fill: f32) -> ViewFrame {
        let k = CameraIntrinsics::from_hfov(8, 6, 60.0).unwrap();
        let mut values = vec![fill; 48];
        values[5] = f32::NAN;
        ViewFrame::new(
            id,
            Raster::new(8, 6, [1, 2, 3]),
            DepthGrid::new(8, 6, values).unwrap(),
            k,
            CameraPose::from_translation(Vec3::new(0.1, 0.2, fill as f64)),
        )
        .unwrap()
    }

    fn sample() -> Bundle {
        let mut views = BTreeMap::new();
        views.insert(ViewId::Source, frame(ViewId::Source, 1.5));
        for t in 0..2 {
            let id = ViewId::Generated { trajectory: 0, step: t };
            views.insert(id, frame(id, 2.0 + t as f32));
        }
        let mut mask = InstanceMask::empty(8, 6, 3, "chair");
        mask.set(2, 2, true);
        let mut masks = BTreeMap::new();
        masks.insert((ViewId::Source, 3), mask);
        Bundle {
            scene_id: "t".into(),
            views,
            masks,
            up_axis: Some(Vec3::new(0.0, -1.0, 0.0)),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let b = sample();
        write_bundle(&b, dir.path()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        assert_eq!(back.views.len(), 3);
        for (id, v) in &b.views {
            let w = &back.views[id];
            assert_eq!(v.image, w.image);
            let bits = |d: &DepthGrid| d.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&v.depth), bits(&w.depth));
            assert_eq!(v.pose, w.pose);
            assert_eq!(v.intrinsics, w.intrinsics);
        }
        assert_eq!(back.masks, b.masks);
        assert_eq!(back.up_axis, b.up_axis);
    }

    #[test]
    fn format_errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&sample(), dir.path()).unwrap();
        let depth = dir.path().join("views/source.depth");
        let bytes = fs::read(&depth).unwrap();
        fs::write(&depth, &bytes[..bytes.len() - 4]).unwrap();
        match load_bundle(dir.path()) {
            Err(ProviderError::BundleFormat { field, .. }) => assert_eq!(field, "depth length"),
            other => panic!("{other:?}"),
        }
        fs::write(&depth, &bytes).unwrap();
        let mpath = dir.path().join(MANIFEST);
        let mut m: Manifest = serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
        m.views[0].pose[0] = 2.0;
        fs::write(&mpath, serde_json::to_string(&m).unwrap()).unwrap();
        match load_bundle(dir.path()) {
            Err(ProviderError::BundleFormat { field, .. }) => assert_eq!(field, "pose"),
            other => panic!("{other:?}"),
        }
        let missing = tempfile::tempdir().unwrap();
        assert!(matches!(load_bundle(missing.path()), Err(ProviderError::BundleFormat { .. })));
    }

    #[test]
    fn missing_view_names_m_and_t() {
        let p = BundleProvider::new(std::sync::Arc::new(sample()));
        let params = TrajectoryParams { count: 2, steps: 3, ..Default::default() };
        let trajs = instantiate_trajectories(AbstractMotion::Forward, &params);
        let src = p.bundle().source().unwrap().clone();
        assert_eq!(p.generate(&src, &trajs[0]), Err(ProviderError::MissingView { trajectory: 0, step: 2 }));
        assert_eq!(p.generate(&src, &trajs[1]), Err(ProviderError::MissingView { trajectory: 1, step: 0 }));
        let each = p.generate_each(&src, &trajs[0]);
        assert_eq!(each.iter().filter(|r| r.is_ok()).count(), 2);
    }

    #[test]
    fn stored_masks_by_key_or_pixel() {
        let p = BundleProvider::new(std::sync::Arc::new(sample()));
        let src = p.bundle().source().unwrap().clone();
        let keyed = p.segment(&src, &ObjectHint { label: "chair".into(), center_px: [0, 0], object_id: 3 }).unwrap();
        assert_eq!(keyed.count(), 1);
        let by_pixel = p.segment(&src, &ObjectHint { label: "chair".into(), center_px: [2, 2], object_id: 0 }).unwrap();
        assert_eq!(by_pixel, keyed);
        assert!(p.segment(&src, &ObjectHint { label: "chair".into(), center_px: [5, 5], object_id: 0 }).is_err());
    }
}
