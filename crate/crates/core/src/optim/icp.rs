use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{KdTree, RigidTransform, Vec3};

/// Transform family searched by the rigid fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RegistrationMode {
    /// Rotation about +z plus a free translation.
    #[default]
    Upright,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpOptions {
    pub mode: RegistrationMode,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    /// Squared residuals saturate here; saturated pairs take no part in the fit.
    pub trim_sq: f64,
    /// Weights at or below this fraction of the largest weight are ignored.
    pub min_relative_weight: f64,
}

impl Default for IcpOptions {
    fn default() -> Self {
        IcpOptions {
            mode: RegistrationMode::Upright,
            max_iterations: 50,
            relative_tolerance: 1e-6,
            trim_sq: f64::MAX,
            min_relative_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Objective after every re-match, starting with the initial pose.
    pub history: Vec<f64>,
}

impl IcpResult {
    pub fn objective(&self) -> f64 {
        self.history.last().copied().unwrap_or(0.0)
    }
}

/// Weighted least-squares rigid map sending `src[i]` towards `dst[i]`.
/// Returns identity when the total weight is zero.
pub fn fit_rigid(src: &[Vec3], dst: &[Vec3], w: &[f64], mode: RegistrationMode) -> RigidTransform {
    let total: f64 = w.iter().sum();
    if total <= 0.0 || src.is_empty() {
        return RigidTransform::identity();
    }
    let mut sc = Vec3::zeros();
    let mut dc = Vec3::zeros();
    for ((s, d), &wi) in src.iter().zip(dst).zip(w) {
        sc += s * wi;
        dc += d * wi;
    }
    sc /= total;
    dc /= total;
    let rotation = match mode {
        RegistrationMode::Upright => {
            let (mut a, mut b) = (0.0, 0.0);
            for ((s, d), &wi) in src.iter().zip(dst).zip(w) {
                let (s, d) = (s - sc, d - dc);
                a += wi * (s.x * d.x + s.y * d.y);
                b += wi * (s.x * d.y - s.y * d.x);
            }
            let theta = if a == 0.0 && b == 0.0 { 0.0 } else { b.atan2(a) };
            RigidTransform::from_yaw(theta, Vector3::zeros()).rotation
        }
        RegistrationMode::Full => {
            let mut h = Matrix3::zeros();
            for ((s, d), &wi) in src.iter().zip(dst).zip(w) {
                h += (s - sc) * (d - dc).transpose() * wi;
            }
            let svd = h.svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let v = vt.transpose();
            let sign = (v * u.transpose()).determinant().signum();
            let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
            v * fix * u.transpose()
        }
    };
    RigidTransform::new(rotation, dc - rotation * sc)
}

struct Matching {
    objective: f64,
    src: Vec<Vec3>,
    dst: Vec<Vec3>,
    w: Vec<f64>,
}

fn rematch(source: &[Vec3], weights: &[f64], active: &[usize], tree: &KdTree, t: &RigidTransform, trim_sq: f64) -> Matching {
    let mut m = Matching {
        objective: 0.0,
        src: Vec::new(),
        dst: Vec::new(),
        w: Vec::new(),
    };
    for &i in active {
        let y = t.apply(&source[i]);
        if let Some((j, d2)) = tree.nearest_within(&[y.x, y.y, y.z], trim_sq) {
            let q = tree.point(j);
            m.objective += weights[i] * d2;
            m.src.push(source[i]);
            m.dst.push(Vec3::new(q[0], q[1], q[2]));
            m.w.push(weights[i]);
        } else {
            m.objective += weights[i] * trim_sq;
        }
    }
    m
}

/// ICP moving `source` into the frame of `target`: each weighted source point
/// is matched to its nearest target point and the pose refit, until the
/// trimmed objective `Σ w·min(d², trim)` stalls. The objective never increases.
pub fn align(source: &[Vec3], weights: &[f64], target: &KdTree, init: &RigidTransform, opts: &IcpOptions) -> IcpResult {
    let max_w = weights.iter().copied().fold(0.0, f64::max);
    if target.is_empty() || !(max_w > 0.0) {
        return IcpResult {
            transform: *init,
            history: Vec::new(),
        };
    }
    let floor = max_w * opts.min_relative_weight;
    let active: Vec<usize> = (0..source.len()).filter(|&i| weights[i] > floor).collect();
    let mut t = *init;
    let mut m = rematch(source, weights, &active, target, &t, opts.trim_sq);
    let mut history = vec![m.objective];
    for _ in 0..opts.max_iterations {
        if m.w.is_empty() || m.objective == 0.0 {
            break;
        }
        // refit in the current posed frame so the correction stays small
        let posed: Vec<Vec3> = m.src.iter().map(|s| t.apply(s)).collect();
        let delta = fit_rigid(&posed, &m.dst, &m.w, opts.mode);
        let candidate = delta.compose(&t);
        let next = rematch(source, weights, &active, target, &candidate, opts.trim_sq);
        if next.objective > m.objective {
            break;
        }
        let change = m.objective - next.objective;
        let stop = change <= opts.relative_tolerance * m.objective;
        t = candidate;
        m = next;
        history.push(m.objective);
        if stop {
            break;
        }
    }
    IcpResult { transform: t, history }
}

/// Registers an exemplar to the scene: scene point `x_p` with weight `w_p` is
/// matched to the nearest point of `T·exemplar`. `exemplar_tree` indexes the
/// exemplar in its canonical frame.
pub fn weighted_icp_with_tree(
    scene: &[Vec3],
    weights: &[f64],
    exemplar_tree: &KdTree,
    t0: &RigidTransform,
    opts: &IcpOptions,
) -> IcpResult {
    let r = align(scene, weights, exemplar_tree, &t0.inverse(), opts);
    IcpResult {
        transform: r.transform.inverse(),
        history: r.history,
    }
}

pub fn weighted_icp(scene: &[Vec3], weights: &[f64], exemplar: &[Vec3], t0: &RigidTransform, opts: &IcpOptions) -> IcpResult {
    let tree = KdTree::from_vectors(exemplar);
    weighted_icp_with_tree(scene, weights, &tree, t0, opts)
}
