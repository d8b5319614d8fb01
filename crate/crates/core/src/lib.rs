//! Training-free 3D sandbox toolkit.
//!
//! Lifts per-view object masks into sparse 3D proxy points, fuses them across
//! views by consensus voting, clusters them into oriented boxes and renders the
//! resulting abstraction for a vision-language model. A procedural world of
//! cuboids provides analytic ground truth for every stage.
//!
//! Module map:
//!
//! - [`geometry`]: pinhole camera math and the shared value types.
//! - [`trajectory`]: abstract camera motions and candidate trajectories.
//! - [`elevation`]: mask erosion, farthest point sampling and lifting.
//! - [`voting`]: cross-view agreement, DBSCAN and PCA box fitting.
//! - [`render`]: deterministic wireframe / splat rasterization.
//! - [`providers`]: generator, depth, segmenter and chat-model interfaces.
//! - [`world`]: synthetic cuboid scenes and the spatial QA oracle.
//! - [`pipeline`]: orchestration, scene bundles, prompts and evaluation.

pub mod elevation;
pub mod exec;
pub mod geometry;
pub mod pipeline;
pub mod providers;
pub mod raster;
pub mod render;
pub mod trajectory;
pub mod voting;
pub mod world;

mod eigen;

pub use exec::Exec;
pub use geometry::{
    backproject, box_corners, project, CameraIntrinsics, CameraPose, CameraRig, DepthGrid,
    InstanceMask, OrientedBox3, ProxyCloud, ProxyPoint, SandboxScene, ViewFrame, ViewId,
};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
