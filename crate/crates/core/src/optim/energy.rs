use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{KdTree, LaplacianOperator, RigidTransform, Vec3};

/// Default non-collision schedule; the last outer iteration always uses the
/// final value.
pub const LAMBDA6_SCHEDULE: [f64; 6] = [1.0, 5.0, 10.0, 1e2, 1e3, 1e9];

/// First `n_out` entries of the default schedule with the last forced to the
/// final value.
pub fn default_schedule(n_out: usize) -> Vec<f64> {
    let last = *LAMBDA6_SCHEDULE.last().unwrap();
    let mut s: Vec<f64> = LAMBDA6_SCHEDULE.iter().copied().take(n_out).collect();
    while s.len() < n_out {
        s.insert(s.len() - 1, LAMBDA6_SCHEDULE[LAMBDA6_SCHEDULE.len() - 2]);
    }
    if let Some(x) = s.last_mut() {
        *x = last;
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyCoefficients {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    /// One value per outer iteration, non-decreasing.
    pub lambda6_schedule: Vec<f64>,
    pub ell: f64,
    /// Constant distance of the clutter row, in squared voxels.
    pub d_clutter: f64,
    /// Exemplar distances saturate at this multiple of `d_clutter`.
    pub d_cap_factor: f64,
    pub irls_epsilon: f64,
}

impl Default for EnergyCoefficients {
    fn default() -> Self {
        EnergyCoefficients {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 100.0,
            lambda4: 10.0,
            lambda5: 1.0,
            lambda6_schedule: default_schedule(5),
            ell: 0.1,
            d_clutter: 10.0,
            d_cap_factor: 4.0,
            irls_epsilon: 1e-4,
        }
    }
}

impl EnergyCoefficients {
    pub fn d_cap(&self) -> f64 {
        self.d_cap_factor * self.d_clutter
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
            ("d_clutter", self.d_clutter),
            ("d_cap_factor", self.d_cap_factor),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.ell > 0.0 && self.ell < 1.0) {
            return bad(format!("ell must lie in (0, 1), got {}", self.ell));
        }
        if !(self.irls_epsilon > 0.0 && self.irls_epsilon.is_finite()) {
            return bad(format!("irls_epsilon must be positive, got {}", self.irls_epsilon));
        }
        if self.lambda6_schedule.is_empty() {
            return bad("lambda6_schedule is empty".into());
        }
        if self.lambda6_schedule.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("lambda6_schedule values must be finite and non-negative".into());
        }
        if self.lambda6_schedule.windows(2).any(|p| p[1] < p[0]) {
            return bad("lambda6_schedule must be non-decreasing".into());
        }
        Ok(())
    }
}

/// Squared distance from each scene point to the nearest point of each posed
/// exemplar, in squared voxels and capped at `d_cap`. Row 0 holds `d_clutter`.
pub fn exemplar_distances(
    points: &[Vec3],
    trees: &[&KdTree],
    transforms: &[RigidTransform],
    voxel_size: f64,
    d_clutter: f64,
    d_cap: f64,
) -> DMatrix<f64> {
    let n_p = points.len();
    let mut d = DMatrix::zeros(trees.len() + 1, n_p);
    d.row_mut(0).fill(d_clutter);
    let inv = 1.0 / (voxel_size * voxel_size);
    let reach = d_cap * voxel_size * voxel_size;
    for (e, (tree, t)) in trees.iter().zip(transforms).enumerate() {
        let back = t.inverse();
        for (p, x) in points.iter().enumerate() {
            let y = back.apply(x);
            let d2 = tree.nearest_within(&[y.x, y.y, y.z], reach).map_or(f64::INFINITY, |(_, d2)| d2);
            d[(e + 1, p)] = (d2 * inv).min(d_cap);
        }
    }
    d
}

/// `(|w| + eps)^(ell - 2)`.
pub fn irls_weights(w: &DMatrix<f64>, ell: f64, eps: f64) -> DMatrix<f64> {
    w.map(|x| (x.abs() + eps).powf(ell - 2.0))
}

/// Smoothed sparsity penalty whose quadratic majorizer at `t0` has curvature
/// `(|t0| + eps)^(ell - 2)`: `g(t) = ∫_0^|t| 2s (s + eps)^(ell - 2) ds`.
pub fn smoothed_penalty(t: f64, ell: f64, eps: f64) -> f64 {
    let t = t.abs();
    let a = (t + eps).powf(ell) - eps.powf(ell);
    let b = (t + eps).powf(ell - 1.0) - eps.powf(ell - 1.0);
    2.0 * (a / ell + eps * b / (1.0 - ell))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    /// Unweighted terms E1..E6.
    pub terms: [f64; 6],
    pub total: f64,
}

/// Semantic data term: squared mismatch between class scores and the summed
/// weights of each class's rows.
pub fn semantic_term(w: &DMatrix<f64>, f: &DMatrix<f64>, row_class: &[u32]) -> f64 {
    let n_c = f.nrows();
    let mut sums = vec![0.0; n_c];
    let mut e1 = 0.0;
    for p in 0..w.ncols() {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (e, &c) in row_class.iter().enumerate() {
            sums[c as usize] += w[(e, p)];
        }
        for c in 0..n_c {
            e1 += (f[(c, p)] - sums[c]).powi(2);
        }
    }
    e1
}

/// `Σ_e w_eᵀ L w_e`.
pub fn smoothness_term(w: &DMatrix<f64>, lap: &LaplacianOperator) -> f64 {
    let mut lw = vec![0.0; w.ncols()];
    let mut e3 = 0.0;
    for e in 0..w.nrows() {
        let row: Vec<f64> = w.row(e).iter().copied().collect();
        lap.apply(&row, &mut lw);
        e3 += row.iter().zip(&lw).map(|(a, b)| a * b).sum::<f64>();
    }
    e3
}

/// `−Σ_{e≥1} v_e Σ_p w_ep`.
pub fn vote_term(w: &DMatrix<f64>, v: &[f64]) -> f64 {
    -v.iter().enumerate().map(|(i, &ve)| ve * w.row(i + 1).sum()).sum::<f64>()
}

pub fn collision_term(v: &[f64], q: &DMatrix<f64>) -> f64 {
    let v = DVector::from_column_slice(v);
    v.dot(&(q * &v))
}

/// All six terms with the geometric term in squared-weight form.
#[allow(clippy::too_many_arguments)]
pub fn total_energy(
    w: &DMatrix<f64>,
    v: &[f64],
    coeffs: &EnergyCoefficients,
    lambda6: f64,
    f: &DMatrix<f64>,
    row_class: &[u32],
    lap: &LaplacianOperator,
    d: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> EnergyTerms {
    let terms = [
        semantic_term(w, f, row_class),
        w.zip_map(d, |a, b| a * a * b).sum(),
        smoothness_term(w, lap),
        w.iter().map(|x| x.abs().powf(coeffs.ell)).sum(),
        vote_term(w, v),
        collision_term(v, q),
    ];
    let lambdas = [
        coeffs.lambda1,
        coeffs.lambda2,
        coeffs.lambda3,
        coeffs.lambda4,
        coeffs.lambda5,
        lambda6,
    ];
    let total = terms.iter().zip(lambdas).map(|(t, l)| t * l).sum();
    EnergyTerms { terms, total }
}

/// Energy the segmentation step decreases: terms 1, 2, 3 and 5 plus the
/// sparsity term, either with the smoothed penalty or, given `eta`, with its
/// quadratic majorizer `Σ eta·w²`.
#[allow(clippy::too_many_arguments)]
pub fn segmentation_energy(
    w: &DMatrix<f64>,
    v: &[f64],
    coeffs: &EnergyCoefficients,
    f: &DMatrix<f64>,
    row_class: &[u32],
    lap: &LaplacianOperator,
    d: &DMatrix<f64>,
    eta: Option<&DMatrix<f64>>,
) -> f64 {
    let sparsity = match eta {
        Some(eta) => w.zip_map(eta, |a, h| h * a * a).sum(),
        None => w.iter().map(|&x| smoothed_penalty(x, coeffs.ell, coeffs.irls_epsilon)).sum(),
    };
    coeffs.lambda1 * semantic_term(w, f, row_class)
        + coeffs.lambda2 * w.zip_map(d, |a, b| a * a * b).sum()
        + coeffs.lambda3 * smoothness_term(w, lap)
        + coeffs.lambda4 * sparsity
        + coeffs.lambda5 * vote_term(w, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_knn_graph, laplacian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_shapes() {
        assert_eq!(default_schedule(5), vec![1.0, 5.0, 10.0, 1e2, 1e9]);
        assert_eq!(default_schedule(1), vec![1e9]);
        assert_eq!(default_schedule(6), LAMBDA6_SCHEDULE.to_vec());
        let s = default_schedule(8);
        assert_eq!(s.len(), 8);
        assert!(s.windows(2).all(|p| p[0] <= p[1]));
        let mut c = EnergyCoefficients::default();
        c.validate().unwrap();
        c.lambda6_schedule = vec![5.0, 1.0];
        assert!(c.validate().is_err());
        c.lambda6_schedule = vec![1.0];
        c.ell = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn irls_values() {
        let w = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let eta = irls_weights(&w, 0.1, 1e-4);
        assert!((eta[(0, 0)] - 1.0).abs() < 1e-3);
        assert!((eta[(0, 1)] - 0.5f64.powf(-1.9)).abs() < 2e-3);
        assert!((0.5f64.powf(-1.9) - 3.732).abs() < 1e-3);
    }

    #[test]
    fn smoothed_penalty_matches_quadrature_and_majorizer() {
        let (ell, eps) = (0.1, 1e-4);
        for &t in &[0.0f64, 1e-5, 0.01, 0.3, 1.0, 2.5] {
            // x = eps·(e^u − 1) spreads the kernel's scale evenly
            let n = 200_000;
            let top = (t / eps + 1.0).ln();
            let h = top / n as f64;
            let mut s = 0.0;
            for i in 0..n {
                let u = (i as f64 + 0.5) * h;
                let x = eps * u.exp_m1();
                s += 2.0 * x * (x + eps).powf(ell - 2.0) * eps * u.exp() * h;
            }
            assert!((smoothed_penalty(t, ell, eps) - s).abs() <= 1e-6 * s.max(1e-12) + 1e-12, "{t}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let t0: f64 = rng.random_range(-1.5..1.5);
            let t: f64 = rng.random_range(-1.5..1.5);
            let eta = (t0.abs() + eps).powf(ell - 2.0);
            let bound = smoothed_penalty(t0, ell, eps) + eta * (t * t - t0 * t0);
            assert!(smoothed_penalty(t, ell, eps) <= bound + 1e-12 * bound.abs().max(1.0));
        }
    }

    #[test]
    fn distances_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ex: Vec<Vec3> = (0..200).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let scene: Vec<Vec3> = (0..150)
            .map(|_| Vec3::new(rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0), rng.random()))
            .collect();
        let tree = KdTree::from_vectors(&ex);
        let ts = [
            RigidTransform::from_yaw(0.3, nalgebra::Vector3::new(0.2, 0.1, 0.0)),
            RigidTransform::from_yaw(-2.0, nalgebra::Vector3::new(1.0, 0.0, 0.1)),
        ];
        let vs = 0.075;
        let d = exemplar_distances(&scene, &[&tree, &tree], &ts, vs, 10.0, 40.0);
        for p in 0..scene.len() {
            assert_eq!(d[(0, p)], 10.0);
            for (e, t) in ts.iter().enumerate() {
                let best = ex
                    .iter()
                    .map(|y| (scene[p] - t.apply(y)).norm_squared())
                    .fold(f64::INFINITY, f64::min);
                assert!((d[(e + 1, p)] - (best / (vs * vs)).min(40.0)).abs() < 1e-10);
            }
        }
        let d = exemplar_distances(&ts[0].apply_all(&ex[..5]), &[&tree], &ts[..1], vs, 10.0, 40.0);
        assert!(d.row(1).iter().all(|&x| x < 1e-20));
    }

    #[test]
    fn total_energy_matches_naive_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n_p = 30;
        let pts: Vec<Vec3> = (0..n_p).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let g = build_knn_graph(&pts, 5, 0.5).unwrap();
        let lap = laplacian(&g).unwrap();
        let ld = lap.to_dense();
        let row_class = [0u32, 1, 1, 2];
        let w = DMatrix::from_fn(4, n_p, |_, _| rng.random_range(-0.2..1.0));
        let f = DMatrix::from_fn(3, n_p, |_, _| rng.random::<f64>());
        let d = DMatrix::from_fn(4, n_p, |_, _| rng.random_range(0.0..40.0));
        let v = [0.3, 1.0, 0.0];
        let q = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let c = EnergyCoefficients::default();
        let got = total_energy(&w, &v, &c, 7.0, &f, &row_class, &lap, &d, &q);

        let mut t = [0.0; 6];
        for p in 0..n_p {
            for cl in 0..3u32 {
                let mut s = 0.0;
                for e in 0..4 {
                    if row_class[e] == cl {
                        s += w[(e, p)];
                    }
                }
                t[0] += (f[(cl as usize, p)] - s).powi(2);
            }
            for e in 0..4 {
                t[1] += w[(e, p)] * w[(e, p)] * d[(e, p)];
                t[3] += w[(e, p)].abs().powf(0.1);
                for r in 0..n_p {
                    t[2] += w[(e, p)] * ld[(p, r)] * w[(e, r)];
                }
            }
            for e in 1..4 {
                t[4] -= v[e - 1] * w[(e, p)];
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                t[5] += v[i] * q[(i, j)] * v[j];
            }
        }
        for k in 0..6 {
            assert!((got.terms[k] - t[k]).abs() <= 1e-10 * t[k].abs().max(1.0), "term {k}");
        }

        // constant rows carry no smoothness cost
        let flat = DMatrix::from_fn(4, n_p, |e, _| 0.25 * e as f64);
        assert!(smoothness_term(&flat, &lap).abs() < 1e-12);
        let exact = DMatrix::from_fn(3, n_p, |r, p| if r == (p % 3) { 1.0 } else { 0.0 });
        assert_eq!(semantic_term(&exact, &exact, &[0, 1, 2]), 0.0);
    }
}
