//! Abstract camera motions and their instantiation as candidate trajectories.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{axis_angle, CameraPose};
use crate::Vec3;

/// One of the five coarse motions a chat model may pick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AbstractMotion {
    #[serde(rename = "left")]
    Left,
    #[serde(rename = "fwd-left")]
    FwdLeft,
    #[serde(rename = "forward")]
    Forward,
    #[serde(rename = "fwd-right")]
    FwdRight,
    #[serde(rename = "right")]
    Right,
}

impl AbstractMotion {
    pub const ALL: [AbstractMotion; 5] = [
        AbstractMotion::Left,
        AbstractMotion::FwdLeft,
        AbstractMotion::Forward,
        AbstractMotion::FwdRight,
        AbstractMotion::Right,
    ];

    pub fn token(self) -> &'static str {
        match self {
            AbstractMotion::Left => "left",
            AbstractMotion::FwdLeft => "fwd-left",
            AbstractMotion::Forward => "forward",
            AbstractMotion::FwdRight => "fwd-right",
            AbstractMotion::Right => "right",
        }
    }

    /// Heading sweep `(first, last)` in degrees; negative turns left.
    /// `sweep_deg` sets the width of the forward-diagonal sweeps.
    pub fn heading_range(self, sweep_deg: f64) -> (f64, f64) {
        match self {
            AbstractMotion::Left => (-90.0, -45.0),
            AbstractMotion::FwdLeft => (-sweep_deg, 0.0),
            AbstractMotion::Forward => (0.0, 0.0),
            // mirrored element-wise so trajectory m of `right` mirrors m of `left`
            AbstractMotion::FwdRight => (sweep_deg, 0.0),
            AbstractMotion::Right => (90.0, 45.0),
        }
    }
}

impl fmt::Display for AbstractMotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for AbstractMotion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parsed = parse_motion(s);
        if parsed.defaulted {
            Err(format!("unknown motion {s:?}"))
        } else {
            Ok(parsed.motion)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedMotion {
    pub motion: AbstractMotion,
    /// No token was found and the motion fell back to `forward`.
    pub defaulted: bool,
}

/// Finds the earliest motion token in free text.
///
/// Matching is case-insensitive and treats `-`, `_` and whitespace as the
/// same separator. At equal positions the longer token wins, so `fwd-left`
/// is never read as `left`.
pub fn parse_motion(text: &str) -> ParsedMotion {
    let mut norm = String::with_capacity(text.len());
    let mut prev_sep = false;
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch == '-' || ch == '_' || ch.is_whitespace() {
            if !prev_sep {
                norm.push('-');
            }
            prev_sep = true;
        } else {
            norm.push(ch);
            prev_sep = false;
        }
    }
    let best = AbstractMotion::ALL
        .iter()
        .filter_map(|m| norm.find(m.token()).map(|pos| (pos, m)))
        .min_by(|(pa, ma), (pb, mb)| pa.cmp(pb).then(mb.token().len().cmp(&ma.token().len())));
    match best {
        Some((_, m)) => ParsedMotion {
            motion: *m,
            defaulted: false,
        },
        None => {
            log::warn!("no motion token in {text:?}; defaulting to forward");
            ParsedMotion {
                motion: AbstractMotion::Forward,
                defaulted: true,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryParams {
    /// Number of candidate trajectories.
    pub count: usize,
    /// Poses per trajectory.
    pub steps: usize,
    pub step_m: f64,
    pub sweep_deg: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            count: 3,
            steps: 4,
            step_m: 0.25,
            sweep_deg: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub index: usize,
    pub heading_deg: f64,
    /// Poses relative to the input camera.
    pub poses: Vec<CameraPose>,
}

/// Headings for `count` trajectories, linear and endpoint-inclusive.
pub fn headings(motion: AbstractMotion, count: usize, sweep_deg: f64) -> Vec<f64> {
    let (a, b) = motion.heading_range(sweep_deg);
    match count {
        0 => Vec::new(),
        1 if motion == AbstractMotion::Forward => vec![0.0],
        1 => vec![(a + b) / 2.0],
        _ => (0..count)
            .map(|m| a + (b - a) * m as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Builds straight yaw-then-translate trajectories with up = camera -y.
pub fn instantiate_trajectories(motion: AbstractMotion, params: &TrajectoryParams) -> Vec<TrajectorySpec> {
    instantiate_trajectories_about(motion, params, &Vec3::new(0.0, -1.0, 0.0))
}

/// Like [`instantiate_trajectories`] with the up direction given in the
/// input camera frame. Pose `t` of trajectory `m` is yawed by heading `h_m`
/// about up and translated `(t + 1) * step_m` along the yawed forward
/// direction projected onto the ground plane.
pub fn instantiate_trajectories_about(
    motion: AbstractMotion,
    params: &TrajectoryParams,
    up_cam: &Vec3,
) -> Vec<TrajectorySpec> {
    assert!(params.count >= 1 && params.steps >= 1 && params.step_m > 0.0);
    let up = up_cam.normalize();
    let f = Vec3::z();
    let mut ground_fwd = f - up * up.dot(&f);
    if ground_fwd.norm() < 1e-9 {
        ground_fwd = Vec3::x() - up * up.x;
    }
    let ground_fwd = ground_fwd.normalize();
    headings(motion, params.count, params.sweep_deg)
        .into_iter()
        .enumerate()
        .map(|(index, heading_deg)| {
            // positive heading turns right, i.e. clockwise seen from above
            let rot = axis_angle(&-up, heading_deg.to_radians());
            let dir = rot * ground_fwd * params.step_m;
            let mut pos = Vec3::zeros();
            let poses = (0..params.steps)
                .map(|_| {
                    pos += dir;
                    CameraPose::new(rot, pos).expect("rodrigues rotation is orthonormal")
                })
                .collect();
            TrajectorySpec {
                index,
                heading_deg,
                poses,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat3;
    use approx::assert_relative_eq;

    #[test]
    fn parse_examples() {
        assert_eq!(parse_motion("fwd-left").motion, AbstractMotion::FwdLeft);
        assert_eq!(parse_motion("I would look FORWARD.").motion, AbstractMotion::Forward);
        let p = parse_motion("no idea");
        assert_eq!(p.motion, AbstractMotion::Forward);
        assert!(p.defaulted);
        assert!(!parse_motion("fwd-left").defaulted);
    }

    #[test]
    fn parse_separators_and_order() {
        assert_eq!(parse_motion("Fwd_Right please").motion, AbstractMotion::FwdRight);
        assert_eq!(parse_motion("fwd   left").motion, AbstractMotion::FwdLeft);
        assert_eq!(parse_motion("right, or maybe left").motion, AbstractMotion::Right);
        assert_eq!(parse_motion("left then forward").motion, AbstractMotion::Left);
        assert_eq!("fwd-right".parse::<AbstractMotion>(), Ok(AbstractMotion::FwdRight));
        assert!("up".parse::<AbstractMotion>().is_err());
    }

    #[test]
    fn forward_offsets() {
        let p = TrajectoryParams { count: 1, steps: 3, step_m: 0.25, sweep_deg: 60.0 };
        let t = instantiate_trajectories(AbstractMotion::Forward, &p);
        assert_eq!(t.len(), 1);
        let z: Vec<f64> = t[0].poses.iter().map(|p| p.translation().z).collect();
        assert_eq!(z, vec![0.25, 0.5, 0.75]);
        for pose in &t[0].poses {
            assert_eq!(*pose.rotation(), Mat3::identity());
            assert_eq!(pose.translation().x, 0.0);
        }
    }

    #[test]
    fn heading_tables() {
        assert_eq!(headings(AbstractMotion::FwdLeft, 3, 60.0), vec![-60.0, -30.0, 0.0]);
        assert_eq!(headings(AbstractMotion::Left, 2, 60.0), vec![-90.0, -45.0]);
        assert_eq!(headings(AbstractMotion::Left, 1, 60.0), vec![-67.5]);
        assert_eq!(headings(AbstractMotion::Forward, 1, 60.0), vec![0.0]);
        assert_eq!(headings(AbstractMotion::Forward, 3, 60.0), vec![0.0; 3]);
    }

    #[test]
    fn left_trajectories_turn_toward_negative_x() {
        let p = TrajectoryParams { count: 2, steps: 2, ..Default::default() };
        let t = instantiate_trajectories(AbstractMotion::Left, &p);
        let fwd = t[0].poses[0].forward();
        assert_relative_eq!(fwd, Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
        assert!(t[1].poses[1].translation().x < 0.0);
    }

    #[test]
    fn mirror_symmetry_is_exact() {
        let s = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
        let p = TrajectoryParams { count: 4, steps: 5, step_m: 0.3, sweep_deg: 50.0 };
        for (l, r) in [
            (AbstractMotion::Left, AbstractMotion::Right),
            (AbstractMotion::FwdLeft, AbstractMotion::FwdRight),
        ] {
            let tl = instantiate_trajectories(l, &p);
            let tr = instantiate_trajectories(r, &p);
            for (a, b) in tl.iter().zip(&tr) {
                assert_eq!(a.heading_deg, -b.heading_deg);
                for (pa, pb) in a.poses.iter().zip(&b.poses) {
                    assert_eq!(s * pa.rotation() * s, *pb.rotation());
                    assert_eq!(s * pa.translation(), *pb.translation());
                }
            }
        }
    }

    #[test]
    fn constant_rigid_step() {
        let p = TrajectoryParams { count: 3, steps: 6, step_m: 0.2, sweep_deg: 60.0 };
        for motion in AbstractMotion::ALL {
            for traj in instantiate_trajectories(motion, &p) {
                assert_eq!(traj.poses.len(), 6);
                let d0 = traj.poses[0].translation();
                for w in traj.poses.windows(2) {
                    assert_eq!(w[0].rotation(), w[1].rotation());
                    assert_relative_eq!(w[1].translation() - w[0].translation(), *d0, epsilon = 1e-12);
                }
                assert_relative_eq!(d0.norm(), 0.2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pitched_up_axis_keeps_translation_horizontal() {
        let up = Vec3::new(0.0, -0.9, -0.3).normalize();
        let p = TrajectoryParams::default();
        for traj in instantiate_trajectories_about(AbstractMotion::FwdRight, &p, &up) {
            for pose in &traj.poses {
                assert!(pose.translation().dot(&up).abs() < 1e-12);
                // yaw about up leaves up fixed
                assert_relative_eq!(pose.rotation() * up, up, epsilon = 1e-12);
            }
        }
    }
}
