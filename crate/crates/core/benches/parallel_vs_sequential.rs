use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sandbox3d::elevation::{elevate_object, ElevationParams, ObjectHint};
use sandbox3d::geometry::{ProxyCloud, ViewId};
use sandbox3d::providers::synthetic::SyntheticProvider;
use sandbox3d::providers::MultiViewGenerator;
use sandbox3d::trajectory::{instantiate_trajectories, AbstractMotion, TrajectoryParams};
use sandbox3d::voting::{build_sandbox, filter_by_consensus_with, ConsensusParams, SandboxParams};
use sandbox3d::world::{generate_world, render_depth, WorldBounds};
use sandbox3d::Exec;
use std::sync::Arc;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn proxy_cloud() -> (ProxyCloud, sandbox3d::geometry::CameraRig, sandbox3d::Vec3) {
    let world = generate_world(11, 5, &WorldBounds::default()).unwrap();
    let hints = world.source_hints(Exec::Sequential);
    let up = world.up;
    let rig = world.camera;
    let p = SyntheticProvider::new(Arc::new(world), Exec::Parallel);
    let src = p.source_view();
    let mut views = vec![src.clone()];
    for t in instantiate_trajectories(AbstractMotion::Forward, &TrajectoryParams::default()) {
        views.extend(p.generate(&src, &t).unwrap());
    }
    let params = ElevationParams { n_pts: 200, ..Default::default() };
    let mut cloud = ProxyCloud::new();
    for v in &views {
        for (i, (label, px)) in hints.iter().enumerate() {
            let h = ObjectHint { label: label.clone(), center_px: *px, object_id: i as u32 };
            if let Ok(e) = elevate_object(v, &h, &p, &params) {
                cloud.extend(e.cloud);
            }
        }
    }
    assert!(views.iter().any(|v| v.view_id == ViewId::Source));
    (cloud, rig, up)
}

fn bench_depth(c: &mut Criterion) {
    let world = generate_world(7, 6, &WorldBounds::default()).unwrap();
    let mut g = c.benchmark_group("render_depth_256");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| render_depth(black_box(&world), &world.camera.pose, &world.camera.intrinsics, exec))
        });
    }
    g.finish();
}

fn bench_voting(c: &mut Criterion) {
    let (cloud, rig, up) = proxy_cloud();
    let mut g = c.benchmark_group("consensus");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| filter_by_consensus_with(black_box(&cloud), &ConsensusParams::default(), exec))
        });
    }
    g.finish();
    let mut g = c.benchmark_group("build_sandbox");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| build_sandbox(black_box(&cloud), &SandboxParams::default(), rig, up, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_depth, bench_voting);
criterion_main!(benches);
