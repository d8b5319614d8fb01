//! Analytic providers backed by a cuboid world.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use super::bundle::Bundle;
use super::{check_hint, DepthEstimate, DepthEstimator, MultiViewGenerator, ProviderError, Segmenter};
use crate::elevation::ObjectHint;
use crate::exec::Exec;
use crate::geometry::{CameraIntrinsics, CameraPose, InstanceMask, ViewFrame, ViewId};
use crate::trajectory::{instantiate_trajectories_about, AbstractMotion, TrajectoryParams, TrajectorySpec};
use crate::world::{HitMap, WorldSpec};

type CameraKey = [u64; 22];

fn camera_key(pose: &CameraPose, k: &CameraIntrinsics) -> CameraKey {
    let mut key = [0u64; 22];
    for (slot, v) in key.iter_mut().zip(pose.to_row_major()) {
        *slot = v.to_bits();
    }
    key[16] = k.fx.to_bits();
    key[17] = k.fy.to_bits();
    key[18] = k.cx.to_bits();
    key[19] = k.cy.to_bits();
    key[20] = k.width as u64;
    key[21] = k.height as u64;
    key
}

/// Generator, depth estimator and segmenter over one synthetic world.
/// Ray casts are cached per camera so the three roles stay consistent.
#[derive(Debug)]
pub struct SyntheticProvider {
    world: Arc<WorldSpec>,
    exec: Exec,
    cache: Mutex<HashMap<CameraKey, Arc<HitMap>>>,
}

impl SyntheticProvider {
    pub fn new(world: Arc<WorldSpec>, exec: Exec) -> Self {
        Self {
            world,
            exec,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn world(&self) -> &WorldSpec {
        &self.world
    }

    pub fn hits(&self, pose: &CameraPose, k: &CameraIntrinsics) -> Arc<HitMap> {
        let key = camera_key(pose, k);
        if let Some(h) = self.cache.lock().expect("cache lock").get(&key) {
            return h.clone();
        }
        let h = Arc::new(self.world.trace(pose, k, self.exec));
        self.cache.lock().expect("cache lock").insert(key, h.clone());
        h
    }

    pub fn view(&self, view_id: ViewId, pose: &CameraPose, k: &CameraIntrinsics) -> ViewFrame {
        let h = self.hits(pose, k);
        ViewFrame::new(view_id, h.rgb(), h.depth_grid(), *k, *pose).expect("dimensions agree by construction")
    }

    pub fn source_view(&self) -> ViewFrame {
        let cam = self.world.camera;
        self.view(ViewId::Source, &cam.pose, &cam.intrinsics)
    }

    /// Source view plus the frames of `motion`'s trajectories, with every
    /// visible instance mask keyed by its instance id.
    pub fn export_bundle(&self, scene_id: &str, motion: AbstractMotion, params: &TrajectoryParams) -> Bundle {
        let src = self.source_view();
        let up_cam = src.pose.rotation().transpose() * self.world.up;
        let mut views = BTreeMap::new();
        for traj in instantiate_trajectories_about(motion, params, &up_cam) {
            for f in self.generate_each(&src, &traj).into_iter().flatten() {
                views.insert(f.view_id, f);
            }
        }
        views.insert(ViewId::Source, src);
        let mut masks = BTreeMap::new();
        for v in views.values() {
            let h = self.hits(&v.pose, &v.intrinsics);
            for c in &self.world.cuboids {
                let m = h.mask(c.instance_id as i32, c.instance_id, &c.label);
                if !m.is_empty() {
                    masks.insert((v.view_id, c.instance_id), m);
                }
            }
        }
        Bundle {
            scene_id: scene_id.to_string(),
            views,
            masks,
            up_axis: Some(self.world.up),
        }
    }
}

impl MultiViewGenerator for SyntheticProvider {
    fn generate_each(&self, input: &ViewFrame, trajectory: &TrajectorySpec) -> Vec<Result<ViewFrame, ProviderError>> {
        trajectory
            .poses
            .iter()
            .enumerate()
            .map(|(t, rel)| {
                let id = ViewId::Generated {
                    trajectory: trajectory.index as u32,
                    step: t as u32,
                };
                Ok(self.view(id, &input.pose.compose(rel), &input.intrinsics))
            })
            .collect()
    }
}

impl DepthEstimator for SyntheticProvider {
    fn estimate(&self, frames: &[ViewFrame]) -> Result<Vec<DepthEstimate>, ProviderError> {
        frames
            .iter()
            .map(|f| {
                if (f.image.width(), f.image.height()) != (f.intrinsics.width, f.intrinsics.height) {
                    return Err(ProviderError::bundle("image", format!("view {} size mismatch", f.view_id)));
                }
                Ok(DepthEstimate {
                    depth: self.hits(&f.pose, &f.intrinsics).depth_grid(),
                    intrinsics: f.intrinsics,
                    pose: f.pose,
                })
            })
            .collect()
    }
}

impl Segmenter for SyntheticProvider {
    fn segment(&self, frame: &ViewFrame, hint: &ObjectHint) -> Result<InstanceMask, ProviderError> {
        check_hint(frame, hint)?;
        let h = self.hits(&frame.pose, &frame.intrinsics);
        let [x, y] = hint.center_px;
        let code = h.hit[(y * h.width + x) as usize];
        if code < 0 {
            return Err(ProviderError::ObjectNotFound {
                view: frame.view_id,
                pixel: hint.center_px,
            });
        }
        Ok(h.mask(code, hint.object_id, &hint.label))
    }
}
