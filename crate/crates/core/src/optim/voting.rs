use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::geometry::voxel::lattice_coord;
use crate::geometry::{RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VotingOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Overlap components up to this size are solved by vertex enumeration.
    pub exact_limit: usize,
}

impl Default for VotingOptions {
    fn default() -> Self {
        VotingOptions {
            max_iterations: 10_000,
            tolerance: 1e-8,
            exact_limit: 20,
        }
    }
}

/// Symmetric 0/1 overlap matrix with zero diagonal: two posed exemplars
/// overlap when their sample points share a lattice voxel.
pub fn collision_matrix(point_sets: &[&[Vec3]], transforms: &[RigidTransform], voxel_size: f64) -> DMatrix<f64> {
    let n = point_sets.len();
    let cells: Vec<HashSet<[i64; 3]>> = point_sets
        .iter()
        .zip(transforms)
        .map(|(pts, t)| pts.iter().map(|p| lattice_coord(&t.apply(p), voxel_size)).collect())
        .collect();
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let (small, large) = if cells[i].len() <= cells[j].len() {
                (&cells[i], &cells[j])
            } else {
                (&cells[j], &cells[i])
            };
            if small.iter().any(|c| large.contains(c)) {
                q[(i, j)] = 1.0;
                q[(j, i)] = 1.0;
            }
        }
    }
    q
}

/// `λ6·vᵀQv − λ5·mᵀv`.
pub fn voting_objective(v: &[f64], q: &DMatrix<f64>, mass: &[f64], lambda5: f64, lambda6: f64) -> f64 {
    let n = v.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += v[i] * q[(i, j)] * v[j];
        }
    }
    lambda6 * quad - lambda5 * mass.iter().zip(v).map(|(m, x)| m * x).sum::<f64>()
}

fn gradient(v: &[f64], q: &DMatrix<f64>, mass: &[f64], lambda5: f64, lambda6: f64) -> Vec<f64> {
    (0..v.len())
        .map(|i| 2.0 * lambda6 * (0..v.len()).map(|j| q[(i, j)] * v[j]).sum::<f64>() - lambda5 * mass[i])
        .collect()
}

/// `‖v − Π(v − ∇F)‖∞` over the unit box.
pub fn projected_gradient_residual(v: &[f64], q: &DMatrix<f64>, mass: &[f64], lambda5: f64, lambda6: f64) -> f64 {
    let g = gradient(v, q, mass, lambda5, lambda6);
    v.iter()
        .zip(&g)
        .map(|(x, gi)| (x - (x - gi).clamp(0.0, 1.0)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotingOutcome {
    pub v: Vec<f64>,
    pub objective: f64,
    pub residual: f64,
    pub pg_iterations: usize,
    /// Objective reached by projected gradient alone.
    pub pg_objective: f64,
}

/// Minimizes the voting objective over the unit box. Projected gradient runs
/// first from `v0`; its result is rounded to a vertex (the objective is
/// linear in each coordinate because `Q` has zero diagonal), improved by
/// single flips, and replaced by the exact vertex minimum on every overlap
/// component small enough to enumerate.
pub fn voting_step(q: &DMatrix<f64>, mass: &[f64], v0: &[f64], lambda5: f64, lambda6: f64, opts: &VotingOptions) -> VotingOutcome {
    let n = mass.len();
    if n == 0 {
        return VotingOutcome {
            v: Vec::new(),
            objective: 0.0,
            residual: 0.0,
            pg_iterations: 0,
            pg_objective: 0.0,
        };
    }
    let q_norm = (0..n).map(|i| q.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let max_mass = mass.iter().map(|m| m.abs()).fold(0.0, f64::max);
    let step = 1.0 / (2.0 * lambda6 * q_norm + lambda5 * max_mass + 1e-12);
    let mut v: Vec<f64> = v0.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let mut pg_iterations = 0;
    for _ in 0..opts.max_iterations {
        if projected_gradient_residual(&v, q, mass, lambda5, lambda6) <= opts.tolerance {
            break;
        }
        pg_iterations += 1;
        let g = gradient(&v, q, mass, lambda5, lambda6);
        for (x, gi) in v.iter_mut().zip(&g) {
            *x = (*x - step * gi).clamp(0.0, 1.0);
        }
    }
    let pg_objective = voting_objective(&v, q, mass, lambda5, lambda6);

    // coordinatewise rounding never increases a multilinear objective
    for i in 0..n {
        let g = gradient(&v, q, mass, lambda5, lambda6);
        v[i] = if g[i] < 0.0 { 1.0 } else { 0.0 };
    }
    local_flips(&mut v, q, mass, lambda5, lambda6);

    for comp in components(q) {
        if comp.len() > opts.exact_limit {
            continue;
        }
        let best = enumerate_component(&comp, q, mass, lambda5, lambda6);
        let current: Vec<f64> = comp.iter().map(|&i| v[i]).collect();
        let mut trial = v.clone();
        for (k, &i) in comp.iter().enumerate() {
            trial[i] = best[k];
        }
        if voting_objective(&trial, q, mass, lambda5, lambda6) < voting_objective(&v, q, mass, lambda5, lambda6) {
            v = trial;
        } else {
            for (k, &i) in comp.iter().enumerate() {
                v[i] = current[k];
            }
        }
    }
    VotingOutcome {
        objective: voting_objective(&v, q, mass, lambda5, lambda6),
        residual: projected_gradient_residual(&v, q, mass, lambda5, lambda6),
        v,
        pg_iterations,
        pg_objective,
    }
}

/// Greedy single flips at a vertex until no flip lowers the objective.
fn local_flips(v: &mut [f64], q: &DMatrix<f64>, mass: &[f64], lambda5: f64, lambda6: f64) {
    loop {
        let g = gradient(v, q, mass, lambda5, lambda6);
        // flipping i changes the objective by (1 − 2v_i)·g_i
        let best = (0..v.len())
            .map(|i| (i, (1.0 - 2.0 * v[i]) * g[i]))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((i, delta)) if delta < 0.0 => v[i] = 1.0 - v[i],
            _ => return,
        }
    }
}

/// Connected components of the overlap graph, each sorted.
fn components(q: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = q.nrows();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut k = 0;
        while k < comp.len() {
            let i = comp[k];
            for j in 0..n {
                if !seen[j] && q[(i, j)] != 0.0 {
                    seen[j] = true;
                    comp.push(j);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Exact vertex minimum over one component by Gray-code enumeration.
fn enumerate_component(comp: &[usize], q: &DMatrix<f64>, mass: &[f64], lambda5: f64, lambda6: f64) -> Vec<f64> {
    let k = comp.len();
    let mut v = vec![0.0; k];
    // s[i] = Σ_j Q_ij v_j within the component
    let mut s = vec![0.0; k];
    let mut f = 0.0;
    let mut best_f = 0.0;
    let mut best = v.clone();
    for step in 1u64..(1u64 << k) {
        let i = step.trailing_zeros() as usize;
        let delta = 1.0 - 2.0 * v[i];
        f += delta * (2.0 * lambda6 * s[i] - lambda5 * mass[comp[i]]);
        v[i] = 1.0 - v[i];
        for (j, sj) in s.iter_mut().enumerate() {
            *sj += delta * q[(comp[j], comp[i])];
        }
        if f < best_f {
            best_f = f;
            best.copy_from_slice(&v);
        }
    }
    best
}
