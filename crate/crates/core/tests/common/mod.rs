#![allow(dead_code)]

use std::sync::Arc;

use sandbox3d::elevation::{elevate_object, ElevationParams, ObjectHint};
use sandbox3d::geometry::{CameraRig, OrientedBox3, ProxyCloud, ViewFrame};
use sandbox3d::pipeline::run::transfer_hint;
use sandbox3d::pipeline::HintTransfer;
use sandbox3d::providers::synthetic::SyntheticProvider;
use sandbox3d::providers::MultiViewGenerator;
use sandbox3d::trajectory::{instantiate_trajectories, AbstractMotion, TrajectoryParams};
use sandbox3d::world::{generate_world, WorldBounds};
use sandbox3d::{Exec, Vec3};

pub struct SceneCloud {
    pub cloud: ProxyCloud,
    pub truth: Vec<OrientedBox3>,
    pub rig: CameraRig,
    pub up: Vec3,
    pub views: Vec<ViewFrame>,
}

/// Noiseless proxies of a synthetic world: ground-truth hints in the input
/// view, M=3 forward trajectories of T=4 frames, default elevation.
pub fn scene_cloud(seed: u64, k: usize) -> SceneCloud {
    let world = generate_world(seed, k, &WorldBounds::default()).expect("world");
    let truth = world.obbs();
    let hints: Vec<ObjectHint> = world
        .cuboids
        .iter()
        .zip(world.source_hints(Exec::Sequential))
        .map(|(c, (label, px))| ObjectHint {
            label,
            center_px: px,
            object_id: c.instance_id,
        })
        .collect();
    let (rig, up) = (world.camera, world.up);
    let p = SyntheticProvider::new(Arc::new(world), Exec::Sequential);
    let src = p.source_view();
    let mut views = vec![src.clone()];
    for t in instantiate_trajectories(AbstractMotion::Forward, &TrajectoryParams::default()) {
        views.extend(p.generate(&src, &t).expect("synthetic views"));
    }
    let mut cloud = ProxyCloud::new();
    for v in &views {
        for h in &hints {
            let Some(h) = transfer_hint(&src, h, v, HintTransfer::Reproject) else {
                continue;
            };
            if let Ok(e) = elevate_object(v, &h, &p, &ElevationParams::default()) {
                cloud.extend(e.cloud);
            }
        }
    }
    SceneCloud {
        cloud,
        truth,
        rig,
        up,
        views,
    }
}
