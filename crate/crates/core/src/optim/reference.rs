use nalgebra::{DMatrix, DVector};

use super::energy::EnergyCoefficients;
use super::segmentation::SegmentationInputs;
use crate::error::{Error, Result};

/// Largest variable count the dense reference solver accepts.
pub const REFERENCE_MAX_VARIABLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub w: DMatrix<f64>,
    /// Scaled KKT violation at the returned point.
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Variables held at zero by the final working set.
    pub active: usize,
}

/// Surrogate objective `wᵀHw + gᵀw` over the flattened weights, index
/// `e * n_p + p`.
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub rows: usize,
    pub n_p: usize,
}

impl DenseQp {
    pub fn new(inputs: &SegmentationInputs, coeffs: &EnergyCoefficients, eta: &DMatrix<f64>) -> Result<Self> {
        let rows = inputs.row_class.len();
        let n_p = inputs.f.ncols();
        let n = rows * n_p;
        if n > REFERENCE_MAX_VARIABLES {
            return Err(Error::SizeExceeded(n));
        }
        let ld = inputs.lap.to_dense();
        let ls = (&ld + ld.transpose()) * 0.5;
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for e in 0..rows {
            let oe = e * n_p;
            for p in 0..n_p {
                h[(oe + p, oe + p)] += coeffs.lambda2 * inputs.d[(e, p)] + coeffs.lambda4 * eta[(e, p)];
                for r in 0..n_p {
                    h[(oe + p, oe + r)] += coeffs.lambda3 * ls[(p, r)];
                }
                let c = inputs.row_class[e] as usize;
                g[oe + p] = -2.0 * coeffs.lambda1 * inputs.f[(c, p)];
                if e > 0 {
                    g[oe + p] -= coeffs.lambda5 * inputs.v[e - 1];
                }
            }
            for e2 in 0..rows {
                if inputs.row_class[e] == inputs.row_class[e2] {
                    for p in 0..n_p {
                        h[(oe + p, e2 * n_p + p)] += coeffs.lambda1;
                    }
                }
            }
        }
        Ok(DenseQp { h, g, rows, n_p })
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x * 2.0 + &self.g
    }
}

/// Null-space directions `e_(j,p) − e_(pivot,p)` over the free variables.
fn null_basis(free: &[bool], rows: usize, n_p: usize) -> Vec<(usize, usize)> {
    let mut dirs = Vec::new();
    for p in 0..n_p {
        let fs: Vec<usize> = (0..rows).map(|e| e * n_p + p).filter(|&i| free[i]).collect();
        for &j in fs.iter().skip(1) {
            dirs.push((j, fs[0]));
        }
    }
    dirs
}

/// Per-point multiplier of the sum constraint: mean gradient over free entries.
fn point_multipliers(grad: &DVector<f64>, free: &[bool], rows: usize, n_p: usize) -> Vec<Option<f64>> {
    (0..n_p)
        .map(|p| {
            let vals: Vec<f64> = (0..rows).map(|e| e * n_p + p).filter(|&i| free[i]).map(|i| grad[i]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

fn kkt_residual(qp: &DenseQp, x: &DVector<f64>, free: &[bool]) -> f64 {
    let grad = qp.gradient(x);
    let scale = grad.amax().max(1.0);
    let nu = point_multipliers(&grad, free, qp.rows, qp.n_p);
    let mut r: f64 = 0.0;
    for p in 0..qp.n_p {
        let s: f64 = (0..qp.rows).map(|e| x[e * qp.n_p + p]).sum();
        r = r.max((s - 1.0).abs());
        let nu_p = nu[p].unwrap_or(0.0);
        for e in 0..qp.rows {
            let i = e * qp.n_p + p;
            r = r.max((-x[i]).max(0.0));
            let mu = grad[i] - nu_p;
            if free[i] {
                r = r.max(mu.abs() / scale);
            } else {
                r = r.max((-mu).max(0.0) / scale);
            }
        }
    }
    r
}

/// Primal active-set method for the surrogate with `w ≥ 0` and unit column
/// sums, from the uniform point and an empty working set. Fails with
/// `NonConvex` when the reduced Hessian is not positive definite.
pub fn segmentation_step_reference(
    inputs: &SegmentationInputs,
    coeffs: &EnergyCoefficients,
    eta: &DMatrix<f64>,
) -> Result<ReferenceSolution> {
    let qp = DenseQp::new(inputs, coeffs, eta)?;
    let (rows, n_p) = (qp.rows, qp.n_p);
    let n = rows * n_p;
    let mut x = DVector::from_element(n, 1.0 / rows as f64);
    let mut free = vec![true; n];
    let max_iter = 20 * n + 100;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let grad = qp.gradient(&x);
        let dirs = null_basis(&free, rows, n_p);
        let mut step = DVector::zeros(n);
        if !dirs.is_empty() {
            let m = dirs.len();
            // H Z column by column, then Zᵀ(H Z)
            let mut hz = DMatrix::zeros(n, m);
            for (k, &(a, b)) in dirs.iter().enumerate() {
                hz.set_column(k, &(qp.h.column(a) - qp.h.column(b)));
            }
            let mut red = DMatrix::zeros(m, m);
            let mut rg = DVector::zeros(m);
            for (k, &(a, b)) in dirs.iter().enumerate() {
                for l in 0..m {
                    red[(k, l)] = 2.0 * (hz[(a, l)] - hz[(b, l)]);
                }
                rg[k] = -(grad[a] - grad[b]);
            }
            let red = (&red + red.transpose()) * 0.5;
            let chol = red.cholesky().ok_or(Error::NonConvex)?;
            let s = chol.solve(&rg);
            for (k, &(a, b)) in dirs.iter().enumerate() {
                step[a] += s[k];
                step[b] -= s[k];
            }
        }
        if step.amax() <= 1e-13 {
            let nu = point_multipliers(&grad, &free, rows, n_p);
            let scale = grad.amax().max(1.0);
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..n {
                if free[i] {
                    continue;
                }
                let mu = grad[i] - nu[i % n_p].unwrap_or(0.0);
                if mu < -1e-12 * scale && worst.is_none_or(|(_, m)| mu < m) {
                    worst = Some((i, mu));
                }
            }
            match worst {
                Some((i, _)) => free[i] = true,
                None => break,
            }
            continue;
        }
        let mut t = 1.0;
        let mut block = None;
        for i in 0..n {
            if free[i] && step[i] < 0.0 {
                let r = -x[i] / step[i];
                if r < t {
                    t = r;
                    block = Some(i);
                }
            }
        }
        x += &step * t;
        if let Some(i) = block {
            x[i] = 0.0;
            free[i] = false;
        }
    }
    let kkt_residual = kkt_residual(&qp, &x, &free);
    let w = DMatrix::from_fn(rows, n_p, |e, p| x[e * n_p + p]);
    Ok(ReferenceSolution {
        w,
        kkt_residual,
        iterations,
        active: free.iter().filter(|f| !**f).count(),
    })
}
