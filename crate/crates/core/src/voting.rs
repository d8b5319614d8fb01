//! Multi-view voting and clustering.
//!
//! Lifted proxies are kept only when enough other views observed a
//! same-category proxy nearby. Survivors are split into instances with
//! DBSCAN and each instance gets a PCA-fitted oriented box.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigen::symmetric_eigen;
use crate::exec::{self, Exec};
use crate::geometry::{
    CameraRig, GeometryError, OrientedBox3, ProxyCloud, SandboxScene, ViewId,
};
use crate::{Mat3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SandboxError {
    #[error("no box survived voting and clustering ({input} proxies in, {kept} kept)")]
    EmptySandbox { input: usize, kept: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusParams {
    /// Agreement radius in meters (strict).
    pub delta: f64,
    /// Distinct other views that must agree.
    pub n_agree: usize,
}

impl Default for ConsensusParams {
    fn default() -> Self {
        Self {
            delta: 0.10,
            n_agree: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_pts: usize,
    pub min_cluster_size: usize,
    pub min_extent: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            eps: 0.45,
            min_pts: 5,
            min_cluster_size: 8,
            min_extent: 0.01,
        }
    }
}

/// Optional statistical outlier removal run after consensus, per category:
/// drop points whose mean distance to their `k` nearest neighbors exceeds
/// the category mean by more than `std_ratio` standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnOutlierParams {
    pub k: usize,
    pub std_ratio: f64,
}

/// Uniform hash grid over points for radius queries.
struct Grid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl Grid {
    fn new(points: &[Vec3], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Candidate indices within one cell of `p` (superset of the radius ball
    /// when radius <= cell), unordered.
    fn candidates<'a>(&'a self, p: &Vec3) -> impl Iterator<Item = usize> + 'a {
        let k = Self::key(p, self.cell);
        (-1..=1).flat_map(move |dx| {
            (-1..=1).flat_map(move |dy| {
                (-1..=1).flat_map(move |dz| {
                    self.cells
                        .get(&[k[0] + dx, k[1] + dy, k[2] + dz])
                        .into_iter()
                        .flatten()
                        .copied()
                })
            })
        })
    }
}

/// True iff some point of `view_points` lies strictly closer than `delta`.
pub fn agree(p: &Vec3, view_points: &[Vec3], delta: f64) -> bool {
    view_points.iter().any(|q| (q - p).norm() < delta)
}

/// Consensus-filtered proxies (input order preserved).
pub fn filter_by_consensus(cloud: &ProxyCloud, params: &ConsensusParams) -> ProxyCloud {
    filter_by_consensus_with(cloud, params, Exec::default())
}

pub fn filter_by_consensus_with(cloud: &ProxyCloud, params: &ConsensusParams, exec: Exec) -> ProxyCloud {
    let keep = consensus_mask(cloud, params, exec);
    ProxyCloud {
        points: cloud
            .points
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(p, _)| p.clone())
            .collect(),
    }
}

fn consensus_mask(cloud: &ProxyCloud, params: &ConsensusParams, exec: Exec) -> Vec<bool> {
    let mut keep = vec![false; cloud.len()];
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        by_label.entry(p.label.as_str()).or_default().push(i);
    }
    for idx in by_label.values() {
        let pts: Vec<Vec3> = idx.iter().map(|&i| cloud.points[i].xyz).collect();
        let views: Vec<ViewId> = idx.iter().map(|&i| cloud.points[i].view_id).collect();
        let grid = Grid::new(&pts, params.delta);
        let decided = exec::map_range(exec, pts.len(), |a| {
            let mut agreeing: BTreeSet<ViewId> = BTreeSet::new();
            for b in grid.candidates(&pts[a]) {
                if views[b] != views[a] && (pts[b] - pts[a]).norm() < params.delta {
                    agreeing.insert(views[b]);
                }
            }
            agreeing.len() >= params.n_agree
        });
        for (k, &i) in idx.iter().enumerate() {
            keep[i] = decided[k];
        }
    }
    keep
}

pub fn knn_outlier_filter(cloud: &ProxyCloud, params: &KnnOutlierParams) -> ProxyCloud {
    let mut keep = vec![true; cloud.len()];
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        by_label.entry(p.label.as_str()).or_default().push(i);
    }
    for idx in by_label.values() {
        if idx.len() <= params.k {
            continue;
        }
        let mean_d: Vec<f64> = idx
            .iter()
            .map(|&i| {
                let mut d: Vec<f64> = idx
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (cloud.points[j].xyz - cloud.points[i].xyz).norm())
                    .collect();
                d.sort_by(f64::total_cmp);
                d[..params.k].iter().sum::<f64>() / params.k as f64
            })
            .collect();
        let n = mean_d.len() as f64;
        let mu = mean_d.iter().sum::<f64>() / n;
        let sd = (mean_d.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n).sqrt();
        for (k, &i) in idx.iter().enumerate() {
            keep[i] = mean_d[k] <= mu + params.std_ratio * sd;
        }
    }
    ProxyCloud {
        points: cloud
            .points
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(p, _)| p.clone())
            .collect(),
    }
}

pub const NOISE: i32 = -1;

/// DBSCAN labels (`-1` = noise).
///
/// Neighborhoods are inclusive (`dist <= eps`) and count the point itself.
/// Points are visited in ascending index order and each cluster is grown
/// breadth-first over ascending neighbor indices, so a border point joins the
/// first cluster that reaches it.
pub fn dbscan(points: &[Vec3], eps: f64, min_pts: usize) -> Vec<i32> {
    dbscan_with(points, eps, min_pts, Exec::default())
}

pub fn dbscan_with(points: &[Vec3], eps: f64, min_pts: usize, exec: Exec) -> Vec<i32> {
    let grid = Grid::new(points, eps.max(f64::MIN_POSITIVE));
    let neighbors: Vec<Vec<usize>> = exec::map_range(exec, points.len(), |i| {
        let mut n: Vec<usize> = grid
            .candidates(&points[i])
            .filter(|&j| (points[j] - points[i]).norm() <= eps)
            .collect();
        n.sort_unstable();
        n
    });
    const UNSEEN: i32 = -2;
    let mut labels = vec![UNSEEN; points.len()];
    let mut next = 0;
    for i in 0..points.len() {
        if labels[i] != UNSEEN {
            continue;
        }
        if neighbors[i].len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        let c = next;
        next += 1;
        labels[i] = c;
        let mut queue: std::collections::VecDeque<usize> = neighbors[i].iter().copied().collect();
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE {
                labels[q] = c;
            }
            if labels[q] != UNSEEN {
                continue;
            }
            labels[q] = c;
            if neighbors[q].len() >= min_pts {
                queue.extend(neighbors[q].iter().copied());
            }
        }
    }
    labels
}

/// Relative eigenvalue gap below which principal directions are treated as
/// interchangeable and resolved by minimizing the box size instead.
pub const DEGENERATE_GAP: f64 = 0.05;

fn extents(points: &[Vec3], mean: &Vec3, axes: &Mat3) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    let at = axes.transpose();
    for p in points {
        let l = at * (p - mean);
        lo = lo.inf(&l);
        hi = hi.sup(&l);
    }
    (lo, hi)
}

fn rotate_pair(axes: &Mat3, i: usize, j: usize, theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    let (a, b) = (axes.column(i).into_owned(), axes.column(j).into_owned());
    let mut out = *axes;
    out.set_column(i, &(a * c + b * s));
    out.set_column(j, &(b * c - a * s));
    out
}

/// Coarse-to-fine search over rotations within the planes `pairs`.
fn minimize_spread(points: &[Vec3], mean: &Vec3, axes: Mat3, pairs: &[(usize, usize)], dims: &[usize]) -> Mat3 {
    let cost = |m: &Mat3| {
        let (lo, hi) = extents(points, mean, m);
        dims.iter().map(|&d| (hi[d] - lo[d]).max(0.0)).product::<f64>()
    };
    let apply = |angles: &[f64]| {
        pairs
            .iter()
            .zip(angles)
            .fold(axes, |m, (&(i, j), &t)| rotate_pair(&m, i, j, t))
    };
    let quarter = std::f64::consts::FRAC_PI_2;
    let coarse: usize = if pairs.len() == 1 { 90 } else { 12 };
    let step = quarter / coarse as f64;
    let mut best = vec![0.0; pairs.len()];
    let mut best_cost = cost(&axes);
    let total = coarse.pow(pairs.len() as u32);
    for flat in 0..total {
        let mut rem = flat;
        let angles: Vec<f64> = (0..pairs.len())
            .map(|_| {
                let a = (rem % coarse) as f64 * step;
                rem /= coarse;
                a
            })
            .collect();
        let c = cost(&apply(&angles));
        if c < best_cost * (1.0 - 1e-12) {
            best_cost = c;
            best = angles;
        }
    }
    let mut h = step / 2.0;
    while h > 1e-7 {
        let mut improved = true;
        while improved {
            improved = false;
            for k in 0..pairs.len() {
                for dir in [-1.0, 1.0] {
                    let mut trial = best.clone();
                    trial[k] += dir * h;
                    let c = cost(&apply(&trial));
                    if c < best_cost * (1.0 - 1e-12) {
                        best_cost = c;
                        best = trial;
                        improved = true;
                    }
                }
            }
        }
        h /= 2.0;
    }
    apply(&best)
}

fn sign_fix(v: Vec3) -> Vec3 {
    let mut k = 0;
    for i in 1..3 {
        if v[i].abs() > v[k].abs() + 1e-12 {
            k = i;
        }
    }
    if v[k] < 0.0 {
        -v
    } else {
        v
    }
}

/// PCA oriented box around `points`.
///
/// Axes are covariance eigenvectors by descending eigenvalue, each flipped so
/// its largest-magnitude component is positive, with the third flipped when
/// needed for a right-handed frame. Inside an eigenspace whose eigenvalues are
/// within [`DEGENERATE_GAP`] of each other the basis is rotated to minimize the
/// box. Extents come from min/max in that frame, floored at `min_extent`.
pub fn fit_obb(points: &[Vec3], label: &str, instance_id: u32, min_extent: f64) -> OrientedBox3 {
    assert!(!points.is_empty(), "fit_obb needs at least one point");
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let cov = points
        .iter()
        .fold(Mat3::zeros(), |a, p| {
            let d = p - mean;
            a + d * d.transpose()
        })
        / n;
    let (vals, mut axes) = symmetric_eigen(&cov);

    if vals[0] > 0.0 {
        let close = |a: f64, b: f64| a - b <= DEGENERATE_GAP * vals[0];
        let (c01, c12) = (close(vals[0], vals[1]), close(vals[1], vals[2]));
        axes = match (c01, c12) {
            (true, true) => minimize_spread(points, &mean, axes, &[(0, 1), (0, 2), (1, 2)], &[0, 1, 2]),
            (true, false) => minimize_spread(points, &mean, axes, &[(0, 1)], &[0, 1]),
            (false, true) => minimize_spread(points, &mean, axes, &[(1, 2)], &[1, 2]),
            (false, false) => axes,
        };
        if c01 || c12 {
            // keep descending-variance order after the in-subspace rotation
            let var: Vec<f64> = (0..3)
                .map(|i| {
                    let a = axes.column(i).into_owned();
                    points.iter().map(|p| (p - mean).dot(&a).powi(2)).sum::<f64>() / n
                })
                .collect();
            let mut order = [0usize, 1, 2];
            order.sort_by(|&i, &j| var[j].total_cmp(&var[i]).then(i.cmp(&j)));
            axes = Mat3::from_columns(&[axes.column(order[0]), axes.column(order[1]), axes.column(order[2])]);
        }
    }

    let a0 = sign_fix(axes.column(0).into_owned());
    let a1 = sign_fix(axes.column(1).into_owned());
    let mut a2 = sign_fix(axes.column(2).into_owned());
    if a0.cross(&a1).dot(&a2) < 0.0 {
        a2 = -a2;
    }
    let axes = Mat3::from_columns(&[a0, a1, a2]);
    let (lo, hi) = extents(points, &mean, &axes);
    let center = mean + axes * ((lo + hi) / 2.0);
    let half = ((hi - lo) / 2.0).map(|h| h.max(min_extent));
    OrientedBox3 {
        center,
        axes,
        half_extents: half,
        label: label.to_string(),
        instance_id,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SandboxStats {
    pub input_points: usize,
    pub consensus_points: usize,
    pub clustered_points: usize,
    pub noise_points: usize,
    pub dropped_small_clusters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandboxBuild {
    pub scene: SandboxScene,
    /// Proxies that survived consensus (and the optional outlier filter).
    pub kept: ProxyCloud,
    pub stats: SandboxStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxParams {
    pub consensus: ConsensusParams,
    pub cluster: ClusterParams,
    pub knn_outlier: Option<KnnOutlierParams>,
}

/// consensus → (outlier filter) → DBSCAN per category → box per cluster.
pub fn build_sandbox(
    cloud: &ProxyCloud,
    params: &SandboxParams,
    origin: CameraRig,
    up_axis: Vec3,
    exec: Exec,
) -> Result<SandboxBuild, SandboxError> {
    let mut kept = filter_by_consensus_with(cloud, &params.consensus, exec);
    let consensus_points = kept.len();
    if let Some(k) = &params.knn_outlier {
        kept = knn_outlier_filter(&kept, k);
    }
    let mut by_label: BTreeMap<&str, Vec<Vec3>> = BTreeMap::new();
    for p in &kept.points {
        by_label.entry(p.label.as_str()).or_default().push(p.xyz);
    }
    let mut stats = SandboxStats {
        input_points: cloud.len(),
        consensus_points,
        ..Default::default()
    };
    let mut boxes = Vec::new();
    for (label, pts) in &by_label {
        let labels = dbscan_with(pts, params.cluster.eps, params.cluster.min_pts, exec);
        let n_clusters = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0)) as usize;
        let mut clusters: Vec<Vec<Vec3>> = vec![Vec::new(); n_clusters];
        for (p, l) in pts.iter().zip(&labels) {
            if *l >= 0 {
                clusters[*l as usize].push(*p);
            } else {
                stats.noise_points += 1;
            }
        }
        let mut sized: Vec<(Vec<Vec3>, Vec3)> = Vec::new();
        for c in clusters {
            if c.len() < params.cluster.min_cluster_size {
                stats.dropped_small_clusters += 1;
                continue;
            }
            stats.clustered_points += c.len();
            let centroid = c.iter().fold(Vec3::zeros(), |a, p| a + p) / c.len() as f64;
            sized.push((c, centroid));
        }
        sized.sort_by(|(a, ca), (b, cb)| {
            b.len().cmp(&a.len()).then_with(|| {
                (0..3)
                    .map(|i| ca[i].total_cmp(&cb[i]))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        for (c, _) in sized {
            let id = boxes.len() as u32;
            boxes.push(fit_obb(&c, label, id, params.cluster.min_extent));
        }
    }
    if boxes.is_empty() {
        return Err(SandboxError::EmptySandbox {
            input: cloud.len(),
            kept: kept.len(),
        });
    }
    let scene = SandboxScene::new(boxes, origin, up_axis)?;
    Ok(SandboxBuild { scene, kept, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, box_corners, ProxyPoint};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pp(xyz: Vec3, label: &str, m: u32) -> ProxyPoint {
        ProxyPoint {
            xyz,
            object_id: 0,
            label: label.into(),
            view_id: if m == 99 { ViewId::Source } else { ViewId::Generated { trajectory: m, step: 0 } },
        }
    }

    #[test]
    fn agree_is_strict() {
        let p = Vec3::zeros();
        assert!(agree(&p, &[Vec3::new(0.04, 0.0, 0.0)], 0.05));
        assert!(!agree(&p, &[Vec3::new(0.05, 0.0, 0.0)], 0.05));
        assert!(!agree(&p, &[], 0.05));
    }

    #[test]
    fn consensus_examples() {
        let params = ConsensusParams { delta: 0.1, n_agree: 2 };
        let shared = Vec3::new(1.0, 2.0, 3.0);
        let mut cloud = ProxyCloud::new();
        for v in 0..3 {
            cloud.points.push(pp(shared, "chair", v));
        }
        cloud.points.push(pp(Vec3::new(5.0, 0.0, 0.0), "chair", 0));
        // same position but other category never votes
        cloud.points.push(pp(Vec3::new(5.0, 0.0, 0.0), "table", 1));
        cloud.points.push(pp(Vec3::new(5.0, 0.0, 0.0), "table", 2));
        let out = filter_by_consensus(&cloud, &params);
        assert_eq!(out.len(), 3);
        assert!(out.points.iter().all(|p| p.xyz == shared));
    }

    #[test]
    fn consensus_counts_distinct_views_only() {
        let params = ConsensusParams { delta: 0.1, n_agree: 2 };
        let mut cloud = ProxyCloud::new();
        cloud.points.push(pp(Vec3::zeros(), "a", 0));
        // two neighbors from the same other view count once
        cloud.points.push(pp(Vec3::new(0.01, 0.0, 0.0), "a", 1));
        cloud.points.push(pp(Vec3::new(0.02, 0.0, 0.0), "a", 1));
        let out = filter_by_consensus(&cloud, &params);
        assert!(out.is_empty());
    }

    fn consensus_oracle(cloud: &ProxyCloud, params: &ConsensusParams) -> Vec<bool> {
        cloud
            .points
            .iter()
            .map(|p| {
                let views: BTreeSet<ViewId> = cloud
                    .points
                    .iter()
                    .filter(|q| q.view_id != p.view_id && q.label == p.label)
                    .map(|q| q.view_id)
                    .collect();
                views
                    .iter()
                    .filter(|v| {
                        let pts: Vec<Vec3> = cloud
                            .points
                            .iter()
                            .filter(|q| q.view_id == **v && q.label == p.label)
                            .map(|q| q.xyz)
                            .collect();
                        agree(&p.xyz, &pts, params.delta)
                    })
                    .count()
                    >= params.n_agree
            })
            .collect()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> ProxyCloud {
        let labels = ["a", "b"];
        ProxyCloud {
            points: (0..n)
                .map(|_| {
                    pp(
                        Vec3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..0.3)),
                        labels[rng.random_range(0..2)],
                        rng.random_range(0..5),
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn consensus_matches_brute_force_and_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let cloud = random_cloud(&mut rng, 150);
            let delta = rng.random_range(0.02..0.2);
            let n_agree = rng.random_range(1..4);
            let p = ConsensusParams { delta, n_agree };
            let fast = consensus_mask(&cloud, &p, Exec::Sequential);
            assert_eq!(fast, consensus_oracle(&cloud, &p));
            assert_eq!(fast, consensus_mask(&cloud, &p, Exec::Parallel));
            let looser = consensus_mask(&cloud, &ConsensusParams { delta: delta * 1.5, n_agree }, Exec::Sequential);
            let fewer = consensus_mask(&cloud, &ConsensusParams { delta, n_agree: n_agree - 1 }, Exec::Sequential);
            for i in 0..fast.len() {
                assert!(!fast[i] || (looser[i] && fewer[i]));
            }
        }
    }

    #[test]
    fn dbscan_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eps = 0.1;
        let mut pts = Vec::new();
        for c in [Vec3::zeros(), Vec3::new(10.0 * eps, 0.0, 0.0)] {
            for _ in 0..20 {
                pts.push(c + Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), 0.0));
            }
        }
        let l = dbscan(&pts, eps, 4);
        assert!(l.iter().all(|v| *v >= 0));
        assert_eq!(l.iter().collect::<BTreeSet<_>>().len(), 2);
    }

    #[test]
    fn dbscan_chain() {
        let pts: Vec<Vec3> = (0..30).map(|i| Vec3::new(i as f64 * 0.05, 0.0, 0.0)).collect();
        let l = dbscan(&pts, 0.1, 2);
        assert!(l.iter().all(|v| *v == 0));
    }

    #[test]
    fn dbscan_isolated_noise() {
        let pts = vec![Vec3::zeros(), Vec3::new(5.0, 0.0, 0.0)];
        assert_eq!(dbscan(&pts, 0.1, 2), vec![NOISE, NOISE]);
        assert_eq!(dbscan(&pts, 0.1, 1), vec![0, 1]);
    }

    #[test]
    fn obb_collinear_floor() {
        let pts = vec![Vec3::zeros(), Vec3::new(1.0, 1.0, 0.0), Vec3::new(2.0, 2.0, 0.0)];
        let b = fit_obb(&pts, "x", 0, 0.01);
        assert_eq!(b.half_extents[1], 0.01);
        assert_eq!(b.half_extents[2], 0.01);
        assert_relative_eq!(b.half_extents[0], 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(b.center, Vec3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn obb_singleton() {
        let b = fit_obb(&[Vec3::new(1.0, 2.0, 3.0)], "x", 3, 0.02);
        assert_eq!(b.center, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(b.half_extents, Vec3::repeat(0.02));
        assert_eq!(b.instance_id, 3);
    }

    #[test]
    fn obb_axes_are_sign_fixed_and_right_handed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let r = axis_angle(&Vec3::new(rng.random(), rng.random(), rng.random()).normalize(), rng.random_range(0.0..3.0));
            let pts: Vec<Vec3> = (0..80)
                .map(|_| r * Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3)))
                .collect();
            let b = fit_obb(&pts, "x", 0, 0.01);
            assert_relative_eq!(b.axes.determinant(), 1.0, epsilon = 1e-9);
            for i in 0..2 {
                let a = b.axis(i);
                let k = (0..3).max_by(|&x, &y| a[x].abs().total_cmp(&a[y].abs())).unwrap();
                assert!(a[k] > 0.0);
            }
            assert!(pts.iter().all(|p| b.contains(p, 1e-9)));
        }
    }

    #[test]
    fn obb_elongated_box_is_recovered() {
        let r = axis_angle(&Vec3::z(), 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec3> = (0..2000)
            .map(|_| r * Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-0.5..0.5), rng.random_range(-0.1..0.1)) + Vec3::new(1.0, 2.0, 3.0))
            .collect();
        let b = fit_obb(&pts, "x", 0, 0.01);
        assert!((b.center - Vec3::new(1.0, 2.0, 3.0)).norm() < 0.02);
        assert!(b.axis(0).dot(&(r * Vec3::x())).abs() > 0.999);
        let corners = box_corners(&b);
        assert_eq!(corners.len(), 8);
    }

    #[test]
    fn sandbox_splits_instances_and_orders_ids() {
        let mut cloud = ProxyCloud::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let centers = [(Vec3::new(0.0, 0.0, 3.0), 180), (Vec3::new(2.0, 0.0, 3.0), 120)];
        for v in 0..3 {
            for (c, n) in centers {
                for _ in 0..n / 3 {
                    let j = Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
                    cloud.points.push(pp(c + j, "chair", v));
                }
            }
        }
        let rig = CameraRig {
            pose: crate::CameraPose::identity(),
            intrinsics: crate::CameraIntrinsics::from_hfov(64, 64, 70.0).unwrap(),
        };
        let b = build_sandbox(&cloud, &SandboxParams::default(), rig, -Vec3::y(), Exec::Sequential).unwrap();
        assert_eq!(b.scene.boxes.len(), 2);
        assert!(b.scene.boxes[0].center.x.abs() < 0.2);
        assert_eq!(b.scene.boxes[0].instance_id, 0);

        let strict = SandboxParams {
            consensus: ConsensusParams { delta: 0.1, n_agree: 3 },
            ..Default::default()
        };
        assert!(matches!(
            build_sandbox(&cloud, &strict, rig, -Vec3::y(), Exec::Sequential),
            Err(SandboxError::EmptySandbox { .. })
        ));
    }
}
