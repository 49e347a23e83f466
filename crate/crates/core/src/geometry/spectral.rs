//! Low-frequency eigenfunctions of the random-walk Laplacian.
//!
//! Eigenpairs are computed on `L_sym = I - D^{-1/2} W D^{-1/2}` and mapped back
//! with `phi = D^{-1/2} u`. The null space is never left to the solver: each
//! connected component contributes its exact normalized indicator, and the
//! solver works on the orthogonal complement.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::graph::{Graph, LaplacianOperator};
use crate::error::{Error, Result};

/// Relative residual `||L phi - mu phi|| / ||phi||` every returned pair satisfies.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Graphs up to this size may fall back to a dense eigendecomposition.
pub const DENSE_LIMIT: usize = 2000;
/// Graphs up to this size always use the dense path.
const DENSE_ALWAYS: usize = 400;
const FILTER_SEED: u64 = 0x5eed_1a9c;

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    /// `n_p x n_b`, unit Euclidean column norm.
    pub phi: DMatrix<f64>,
    /// Ascending; exactly 0 for the component indicators.
    pub mu: Vec<f64>,
    /// `||phi_i||_1` for null-space columns, 0 otherwise.
    pub beta: Vec<f64>,
    pub component: Vec<usize>,
    pub n_components: usize,
}

impl SpectralBasis {
    pub fn n_points(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_basis(&self) -> usize {
        self.phi.ncols()
    }

    /// `||Phi beta - 1||_inf`.
    pub fn feasibility_residual(&self) -> f64 {
        let b = nalgebra::DVector::from_column_slice(&self.beta);
        (&self.phi * b).iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Largest relative residual `||L phi_i - mu_i phi_i|| / ||phi_i||`.
    pub fn max_residual(&self, l: &LaplacianOperator) -> f64 {
        let lphi = l.apply_matrix(&self.phi);
        let mut worst: f64 = 0.0;
        for i in 0..self.n_basis() {
            let r = lphi.column(i) - self.phi.column(i) * self.mu[i];
            worst = worst.max(r.norm() / self.phi.column(i).norm());
        }
        worst
    }
}

/// Returns the `n_b` lowest eigenfunctions. When the graph has more
/// components than `n_b`, the basis is widened to one column per component
/// so that `Phi beta = 1` stays attainable.
pub fn spectral_basis(l: &LaplacianOperator, graph: &Graph, n_b: usize) -> Result<SpectralBasis> {
    let n = graph.len();
    if n != l.len() {
        return Err(Error::InvalidParameter(format!(
            "laplacian has {} rows but graph has {n} nodes",
            l.len()
        )));
    }
    if n_b == 0 || n_b > n {
        return Err(Error::InvalidParameter(format!("n_b = {n_b} must be in 1..={n}")));
    }
    let (component, n_comp) = graph.components();
    let n_b = n_b.max(n_comp);
    let n_rest = n_b - n_comp;
    let sqrt_deg: Vec<f64> = graph.degree().iter().map(|d| d.sqrt()).collect();
    let deflate = Deflation::new(&component, n_comp, &sqrt_deg);

    let (rest_mu, rest_u) = if n_rest == 0 {
        (Vec::new(), DMatrix::zeros(n, 0))
    } else if n <= DENSE_ALWAYS || n_rest * 4 > n {
        dense_pairs(graph, &deflate, n_rest)?
    } else {
        match filtered_pairs(graph, &deflate, n_rest) {
            Ok(p) => p,
            Err(e) if n <= DENSE_LIMIT => {
                let _ = e;
                dense_pairs(graph, &deflate, n_rest)?
            }
            Err(e) => return Err(e),
        }
    };

    let mut phi = DMatrix::zeros(n, n_b);
    let mut mu = vec![0.0; n_b];
    let mut beta = vec![0.0; n_b];
    let mut sizes = vec![0usize; n_comp];
    for &c in &component {
        sizes[c] += 1;
    }
    for (p, &c) in component.iter().enumerate() {
        phi[(p, c)] = 1.0 / (sizes[c] as f64).sqrt();
    }
    for (c, &s) in sizes.iter().enumerate() {
        beta[c] = (s as f64).sqrt();
    }
    for j in 0..n_rest {
        let mut col: Vec<f64> = (0..n).map(|p| rest_u[(p, j)] / sqrt_deg[p]).collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best })
            .0;
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for v in &mut col {
            *v *= sign / norm;
        }
        phi.column_mut(n_comp + j).copy_from_slice(&col);
        mu[n_comp + j] = rest_mu[j];
    }
    let basis = SpectralBasis {
        phi,
        mu,
        beta,
        component,
        n_components: n_comp,
    };
    let residual = basis.max_residual(l);
    if !(residual <= RESIDUAL_TOL) {
        return Err(Error::EigensolverNoConvergence { residual, iterations: 0 });
    }
    Ok(basis)
}

/// Orthogonal projection onto the complement of the `L_sym` null space,
/// spanned by `D^{1/2} 1_c` for each component `c`.
struct Deflation<'a> {
    component: &'a [usize],
    sqrt_deg: &'a [f64],
    norm2: Vec<f64>,
}

impl<'a> Deflation<'a> {
    fn new(component: &'a [usize], n_comp: usize, sqrt_deg: &'a [f64]) -> Self {
        let mut norm2 = vec![0.0; n_comp];
        for (p, &c) in component.iter().enumerate() {
            norm2[c] += sqrt_deg[p] * sqrt_deg[p];
        }
        Deflation {
            component,
            sqrt_deg,
            norm2,
        }
    }

    fn project(&self, x: &mut [f64]) {
        let mut dots = vec![0.0; self.norm2.len()];
        for (p, &c) in self.component.iter().enumerate() {
            dots[c] += self.sqrt_deg[p] * x[p];
        }
        for (p, &c) in self.component.iter().enumerate() {
            x[p] -= dots[c] / self.norm2[c] * self.sqrt_deg[p];
        }
    }

    fn dense(&self) -> DMatrix<f64> {
        let n = self.component.len();
        let mut m = DMatrix::zeros(n, n);
        for p in 0..n {
            for q in 0..n {
                let (cp, cq) = (self.component[p], self.component[q]);
                if cp == cq {
                    m[(p, q)] = self.sqrt_deg[p] * self.sqrt_deg[q] / self.norm2[cp];
                }
            }
        }
        m
    }
}

fn sym_laplacian_dense(graph: &Graph) -> DMatrix<f64> {
    let n = graph.len();
    let deg = graph.degree();
    let mut m = DMatrix::identity(n, n);
    for p in 0..n {
        for (q, w) in graph.neighbors(p) {
            m[(p, q)] -= w / (deg[p] * deg[q]).sqrt();
        }
    }
    m
}

/// Null directions are lifted to eigenvalue 3, above the spectrum bound 2.
fn dense_pairs(graph: &Graph, deflate: &Deflation, count: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let m = sym_laplacian_dense(graph) + deflate.dense() * 3.0;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let n = graph.len();
    let mut u = DMatrix::zeros(n, count);
    let mut mu = Vec::with_capacity(count);
    for (j, &k) in order.iter().take(count).enumerate() {
        u.column_mut(j).copy_from(&eig.eigenvectors.column(k));
        mu.push(eig.eigenvalues[k].max(0.0));
    }
    Ok((mu, u))
}

/// `y = P L_sym P x` with the deflation projector `P`.
fn apply_deflated(graph: &Graph, deflate: &Deflation, x: &[f64], tmp: &mut Vec<f64>, y: &mut [f64]) {
    tmp.clear();
    tmp.extend_from_slice(x);
    deflate.project(tmp);
    graph.normalized_adjacency_apply(tmp, y);
    for (yi, ti) in y.iter_mut().zip(tmp.iter()) {
        *yi = ti - *yi;
    }
    deflate.project(y);
}

fn apply_block(graph: &Graph, deflate: &Deflation, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    let mut tmp = Vec::with_capacity(x.nrows());
    let mut buf = vec![0.0; x.nrows()];
    for j in 0..x.ncols() {
        apply_deflated(graph, deflate, x.column(j).as_slice(), &mut tmp, &mut buf);
        out.column_mut(j).copy_from_slice(&buf);
    }
    out
}

/// Chebyshev polynomial of degree `deg` damping `[a, b]`, applied blockwise.
fn chebyshev_filter(graph: &Graph, deflate: &Deflation, x: &DMatrix<f64>, deg: usize, a: f64, b: f64) -> DMatrix<f64> {
    let e = (b - a) / 2.0;
    let c = (b + a) / 2.0;
    let mut prev = x.clone();
    let mut cur = (apply_block(graph, deflate, x) - x * c) / e;
    for _ in 1..deg {
        let next = (apply_block(graph, deflate, &cur) - &cur * c) * (2.0 / e) - &prev;
        prev = cur;
        cur = next;
        let scale = cur.amax();
        if scale > 1e100 {
            prev /= scale;
            cur /= scale;
        }
    }
    cur
}

fn orthonormalize(x: DMatrix<f64>) -> DMatrix<f64> {
    let qr = x.qr();
    qr.q()
}

/// Residual of the mapped pair in the random-walk metric.
fn rw_residual(u: &[f64], lu: &[f64], mu: f64, sqrt_deg: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..u.len() {
        let r = (lu[p] - mu * u[p]) / sqrt_deg[p];
        let f = u[p] / sqrt_deg[p];
        num += r * r;
        den += f * f;
    }
    (num / den).sqrt()
}

/// Chebyshev-filtered subspace iteration with Rayleigh-Ritz extraction.
fn filtered_pairs(graph: &Graph, deflate: &Deflation, count: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = graph.len();
    let block = (count + count.div_ceil(2).max(8)).min(n - deflate.norm2.len());
    let mut rng = ChaCha8Rng::seed_from_u64(FILTER_SEED);
    let mut x = DMatrix::from_fn(n, block, |_, _| StandardNormal.sample(&mut rng));
    for j in 0..block {
        let mut col: Vec<f64> = x.column(j).iter().copied().collect();
        deflate.project(&mut col);
        x.column_mut(j).copy_from_slice(&col);
    }
    x = orthonormalize(x);
    let sqrt_deg = deflate.sqrt_deg;
    let upper = 2.0;
    let mut degree = 16usize;
    let mut cutoff = None::<f64>;
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let max_iter = 400;
    for iter in 0..max_iter {
        if let Some(a) = cutoff {
            x = chebyshev_filter(graph, deflate, &x, degree, a, upper);
            // the filter amplifies rounding leaks into the deflated null space
            for j in 0..block {
                let mut col: Vec<f64> = x.column(j).iter().copied().collect();
                deflate.project(&mut col);
                x.column_mut(j).copy_from_slice(&col);
            }
            x = orthonormalize(x);
        }
        let lx = apply_block(graph, deflate, &x);
        let h = x.transpose() * &lx;
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
        let mut v = DMatrix::zeros(block, block);
        let mut theta = Vec::with_capacity(block);
        for (j, &k) in order.iter().enumerate() {
            v.column_mut(j).copy_from(&eig.eigenvectors.column(k));
            theta.push(eig.eigenvalues[k]);
        }
        x = &x * &v;
        let lx = lx * &v;
        let worst = (0..count)
            .map(|j| rw_residual(x.column(j).as_slice(), lx.column(j).as_slice(), theta[j], sqrt_deg))
            .fold(0.0, f64::max);
        if worst <= RESIDUAL_TOL * 0.5 {
            let mu = theta[..count].iter().map(|t| t.max(0.0)).collect();
            return Ok((mu, x.columns(0, count).into_owned()));
        }
        if worst < best * 0.9 {
            best = worst;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 3 {
                degree = (degree * 2).min(256);
                stalled = 0;
            }
        }
        // Damp everything above the largest Ritz value kept in the block.
        cutoff = Some(theta[block - 1].clamp(1e-12, upper * 0.99));
        if iter + 1 == max_iter {
            return Err(Error::EigensolverNoConvergence {
                residual: worst,
                iterations: max_iter,
            });
        }
    }
    unreachable!()
}
