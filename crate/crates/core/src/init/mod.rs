//! Object proposals: per-class mean shift on the floor plane, 8-start pose
//! fitting and the initial weight field.

pub mod meanshift;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

pub use meanshift::{merge_modes, weighted_mean_shift, Kde, MeanShiftOptions, Mode};

use crate::exemplar::{ExemplarModel, ExemplarSet};
use crate::forest::PointScores;
use crate::geometry::{KdTree, RigidTransform, Vec3};
use crate::optim::icp::{align, IcpOptions, RegistrationMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitOptions {
    /// Bandwidth as a fraction of the median exemplar footprint diagonal.
    pub bandwidth_scale: f64,
    pub yaw_starts: usize,
    /// Rejection threshold on the mean exemplar-to-scene distance, in voxels.
    pub reject_voxels: f64,
    /// Percentile of nearby point heights taken as the floor.
    pub floor_percentile: f64,
    /// Exemplar points used while fitting; the score uses all of them.
    pub fit_points: usize,
    pub icp_iterations: usize,
    pub mode: RegistrationMode,
    pub mean_shift: MeanShiftOptions,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            bandwidth_scale: 0.5,
            yaw_starts: 8,
            reject_voxels: 3.0,
            floor_percentile: 5.0,
            fit_points: 500,
            icp_iterations: 50,
            mode: RegistrationMode::Upright,
            mean_shift: MeanShiftOptions::default(),
        }
    }
}

/// Median footprint diagonal of the class's exemplars times `scale`.
pub fn class_bandwidth(set: &ExemplarSet, class: u32, scale: f64) -> Option<f64> {
    let mut diags: Vec<f64> = set.of_class(class).into_iter().map(|e| set.get(e).xy_diagonal()).collect();
    if diags.is_empty() {
        return None;
    }
    diags.sort_by(f64::total_cmp);
    let n = diags.len();
    let median = if n % 2 == 1 {
        diags[n / 2]
    } else {
        0.5 * (diags[n / 2 - 1] + diags[n / 2])
    };
    Some(scale * median)
}

/// Linear-interpolated percentile, `q` in [0, 100].
fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = (q / 100.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseFit {
    pub transform: RigidTransform,
    /// Mean distance from posed exemplar points to the scene, in meters.
    pub score: f64,
    pub start: usize,
}

/// Scene data shared by all pose fits.
pub struct SceneIndex<'a> {
    pub points: &'a [Vec3],
    pub tree: KdTree,
}

impl<'a> SceneIndex<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        SceneIndex {
            points,
            tree: KdTree::from_vectors(points),
        }
    }

    /// Floor height near `mode`: the given percentile of z over points within
    /// `radius` in the plane. `None` when no point is that close.
    pub fn floor_height(&self, mode: [f64; 2], radius: f64, q: f64) -> Option<f64> {
        let mut zs: Vec<f64> = self
            .points
            .iter()
            .filter(|p| (p.x - mode[0]).powi(2) + (p.y - mode[1]).powi(2) <= radius * radius)
            .map(|p| p.z)
            .collect();
        (!zs.is_empty()).then(|| percentile(&mut zs, q))
    }

    fn mean_distance(&self, points: &[Vec3], t: &RigidTransform) -> f64 {
        let sum: f64 = points
            .iter()
            .map(|p| {
                let y = t.apply(p);
                self.tree.nearest(&[y.x, y.y, y.z]).map_or(f64::INFINITY, |(_, d2)| d2.sqrt())
            })
            .sum();
        sum / points.len() as f64
    }
}

/// Evenly strided subset of at most `n` points.
fn stride_subset(points: &[Vec3], n: usize) -> Vec<Vec3> {
    if points.len() <= n || n == 0 {
        return points.to_vec();
    }
    (0..n).map(|i| points[i * points.len() / n]).collect()
}

/// Best of `yaw_starts` upright ICP fits of the exemplar dropped at `mode` on
/// the local floor. `None` when the best mean distance exceeds the threshold.
pub fn init_pose(
    exemplar: &ExemplarModel,
    mode: [f64; 2],
    scene: &SceneIndex,
    voxel_size: f64,
    bandwidth: f64,
    opts: &InitOptions,
) -> Option<PoseFit> {
    if scene.points.is_empty() || exemplar.points.is_empty() {
        return None;
    }
    let floor = scene.floor_height(mode, bandwidth, opts.floor_percentile)?;
    let fc = exemplar.footprint_center();
    let to_origin = RigidTransform::new(nalgebra::Matrix3::identity(), -fc);
    let fit_pts = stride_subset(&exemplar.points, opts.fit_points);
    let weights = vec![1.0; fit_pts.len()];
    let icp = IcpOptions {
        mode: opts.mode,
        max_iterations: opts.icp_iterations,
        trim_sq: bandwidth * bandwidth,
        ..IcpOptions::default()
    };
    let mut best: Option<PoseFit> = None;
    for k in 0..opts.yaw_starts {
        let yaw = std::f64::consts::TAU * k as f64 / opts.yaw_starts as f64;
        let place = RigidTransform::from_yaw(yaw, Vector3::new(mode[0], mode[1], floor));
        let t0 = place.compose(&to_origin);
        let r = align(&fit_pts, &weights, &scene.tree, &t0, &icp);
        let score = scene.mean_distance(&exemplar.points, &r.transform);
        if best.is_none_or(|b| score < b.score) {
            best = Some(PoseFit {
                transform: r.transform,
                score,
                start: k,
            });
        }
    }
    best.filter(|b| b.score <= opts.reject_voxels * voxel_size)
}

/// A posed exemplar taking part in the optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// 1-based index into the exemplar set.
    pub exemplar: usize,
    pub class: u32,
    pub transform: RigidTransform,
    pub mode: [f64; 2],
    pub init_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModes {
    pub class: u32,
    pub bandwidth: f64,
    pub modes: Vec<Mode>,
}

/// Mean shift per class on the forest scores, then one pose fit per
/// (mode, exemplar of that class); rejected fits are dropped.
pub fn propose_candidates(
    set: &ExemplarSet,
    scores: &PointScores,
    scene: &SceneIndex,
    voxel_size: f64,
    opts: &InitOptions,
) -> (Vec<ClassModes>, Vec<Candidate>) {
    let mut all_modes = Vec::new();
    let mut candidates = Vec::new();
    for c in 1..scores.n_labels() as u32 {
        let Some(bw) = class_bandwidth(set, c, opts.bandwidth_scale) else {
            continue;
        };
        let weights: Vec<f64> = scores.f.row(c as usize).iter().copied().collect();
        let modes = weighted_mean_shift(scene.points, &weights, bw, &opts.mean_shift);
        for m in &modes {
            for e in set.of_class(c) {
                if let Some(fit) = init_pose(set.get(e), m.position, scene, voxel_size, bw, opts) {
                    candidates.push(Candidate {
                        exemplar: e,
                        class: c,
                        transform: fit.transform,
                        mode: m.position,
                        init_score: fit.score,
                    });
                }
            }
        }
        all_modes.push(ClassModes {
            class: c,
            bandwidth: bw,
            modes,
        });
    }
    (all_modes, candidates)
}

/// Row 0 is clutter; row `e` belongs to `classes[e - 1]`. Each class's score
/// is split evenly over its rows, and scores of classes without rows go to
/// clutter so every column sums to one.
pub fn init_weights(f: &DMatrix<f64>, classes: &[u32]) -> DMatrix<f64> {
    let n_c = f.nrows();
    let n_p = f.ncols();
    let mut count = vec![0usize; n_c];
    for &c in classes {
        count[c as usize] += 1;
    }
    let mut w = DMatrix::zeros(classes.len() + 1, n_p);
    for p in 0..n_p {
        let mut clutter = f[(0, p)];
        for c in 1..n_c {
            if count[c] == 0 {
                clutter += f[(c, p)];
            }
        }
        w[(0, p)] = clutter;
        for (i, &c) in classes.iter().enumerate() {
            w[(i + 1, p)] = f[(c as usize, p)] / count[c as usize] as f64;
        }
    }
    w
}
