use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::energy::{irls_weights, segmentation_energy, EnergyCoefficients};
use crate::error::{Error, Result};
use crate::geometry::{LaplacianOperator, SpectralBasis};

/// Regularization added to a singular reduced system.
pub const KKT_REGULARIZATION: f64 = 1e-10;

/// Data the segmentation step holds fixed.
pub struct SegmentationInputs<'a> {
    /// Class scores, `n_c × n_p`.
    pub f: &'a DMatrix<f64>,
    /// Class of each weight row; row 0 is clutter with class 0.
    pub row_class: &'a [u32],
    /// Squared-voxel distances, one row per weight row.
    pub d: &'a DMatrix<f64>,
    /// Votes of rows 1.., one per candidate.
    pub v: &'a [f64],
    pub lap: &'a LaplacianOperator,
}

/// Basis products reused across solves.
pub struct Subspace<'a> {
    pub basis: &'a SpectralBasis,
    /// `ΦᵀΦ`.
    pub gram: DMatrix<f64>,
    /// Symmetric part of `ΦᵀLΦ`.
    pub smooth: DMatrix<f64>,
    pub phi_t_one: DVector<f64>,
    pub beta: DVector<f64>,
}

impl<'a> Subspace<'a> {
    pub fn new(basis: &'a SpectralBasis, lap: &LaplacianOperator) -> Self {
        let phi = &basis.phi;
        let gram = phi.tr_mul(phi);
        let lphi = lap.apply_matrix(phi);
        let s = phi.tr_mul(&lphi);
        let smooth = (&s + s.transpose()) * 0.5;
        let phi_t_one = DVector::from_iterator(phi.ncols(), phi.column_iter().map(|c| c.sum()));
        Subspace {
            basis,
            gram,
            smooth,
            phi_t_one,
            beta: DVector::from_column_slice(&basis.beta),
        }
    }

    pub fn n_basis(&self) -> usize {
        self.basis.phi.ncols()
    }

    /// Least-squares coefficients of each row of `w`; column 0 is then reset
    /// so the columns sum to `beta` exactly.
    pub fn project(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let rhs = self.basis.phi.tr_mul(&w.transpose());
        let mut alpha = match self.gram.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => self
                .gram
                .clone()
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .expect("both factors were computed"),
        };
        self.fix_clutter(&mut alpha);
        alpha
    }

    fn fix_clutter(&self, alpha: &mut DMatrix<f64>) {
        let mut a0 = self.beta.clone();
        for e in 1..alpha.ncols() {
            a0 -= alpha.column(e);
        }
        alpha.set_column(0, &a0);
    }

    /// `w = (Φα)ᵀ`, one row per column of `alpha`.
    pub fn expand(&self, alpha: &DMatrix<f64>) -> DMatrix<f64> {
        (&self.basis.phi * alpha).transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveInfo {
    /// Crude reciprocal condition estimate from the factor's diagonal.
    pub rcond: f64,
    pub positive_definite: bool,
    pub regularized: bool,
}

/// `Φᵀ diag(s) Φ` for non-negative `s`.
fn weighted_gram(phi: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut b = phi.clone();
    for (mut row, &x) in b.row_iter_mut().zip(s) {
        row *= x.max(0.0).sqrt();
    }
    b.tr_mul(&b)
}

fn diag_ratio(d: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = d.fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x.abs()), hi.max(x.abs())));
    if hi > 0.0 {
        lo / hi
    } else {
        0.0
    }
}

/// Minimizes the surrogate energy with frozen `eta` over `w = Φα`,
/// `Σ_e α_e = β`. Clutter coefficients are eliminated through the constraint
/// and the reduced stationarity system is solved directly.
pub fn solve_surrogate(
    sub: &Subspace,
    inputs: &SegmentationInputs,
    coeffs: &EnergyCoefficients,
    eta: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, SolveInfo)> {
    let phi = &sub.basis.phi;
    let nb = sub.n_basis();
    let rows = inputs.row_class.len();
    let phi_t_f = phi.tr_mul(&inputs.f.transpose());
    let n_p = phi.nrows();
    let block = |e: usize| {
        let s: Vec<f64> = (0..n_p)
            .map(|p| coeffs.lambda2 * inputs.d[(e, p)] + coeffs.lambda4 * eta[(e, p)])
            .collect();
        weighted_gram(phi, &s) + &sub.smooth * coeffs.lambda3 + &sub.gram * coeffs.lambda1
    };
    let mut alpha = DMatrix::zeros(nb, rows);
    if rows == 1 {
        alpha.set_column(0, &sub.beta);
        return Ok((
            alpha,
            SolveInfo {
                rcond: 1.0,
                positive_definite: true,
                regularized: false,
            },
        ));
    }
    let h00 = block(0);
    let g0 = phi_t_f.column(0) * (-2.0 * coeffs.lambda1);
    let shift = &g0 + &h00 * &sub.beta * 2.0;
    let n = (rows - 1) * nb;
    let mut h = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for e in 1..rows {
        let be = block(e);
        let o = (e - 1) * nb;
        h.view_mut((o, o), (nb, nb)).copy_from(&(be + &h00));
        for e2 in (e + 1)..rows {
            let o2 = (e2 - 1) * nb;
            let mut cross = h00.clone();
            if inputs.row_class[e] == inputs.row_class[e2] {
                cross += &sub.gram * coeffs.lambda1;
            }
            h.view_mut((o, o2), (nb, nb)).copy_from(&cross);
            h.view_mut((o2, o), (nb, nb)).copy_from(&cross.transpose());
        }
        let c = inputs.row_class[e] as usize;
        let ge = phi_t_f.column(c) * (-2.0 * coeffs.lambda1) - &sub.phi_t_one * (coeffs.lambda5 * inputs.v[e - 1]);
        rhs.rows_mut(o, nb).copy_from(&(-(ge - &shift)));
    }
    h *= 2.0;
    let (x, info) = solve_symmetric(h, rhs)?;
    for e in 1..rows {
        alpha.set_column(e, &x.rows((e - 1) * nb, nb));
    }
    sub.fix_clutter(&mut alpha);
    Ok((alpha, info))
}

/// Cholesky when positive definite, otherwise LU, regularizing once if the
/// factor is singular.
pub fn solve_symmetric(h: DMatrix<f64>, rhs: DVector<f64>) -> Result<(DVector<f64>, SolveInfo)> {
    if let Some(chol) = h.clone().cholesky() {
        let rcond = diag_ratio(chol.l_dirty().diagonal().iter().copied()).powi(2);
        return Ok((
            chol.solve(&rhs),
            SolveInfo {
                rcond,
                positive_definite: true,
                regularized: false,
            },
        ));
    }
    let lu = h.clone().lu();
    if let Some(x) = lu.solve(&rhs) {
        let rcond = diag_ratio(lu.u().diagonal().iter().copied());
        if rcond > f64::EPSILON {
            return Ok((
                x,
                SolveInfo {
                    rcond,
                    positive_definite: false,
                    regularized: false,
                },
            ));
        }
    }
    let n = h.nrows();
    let reg = h + DMatrix::identity(n, n) * KKT_REGULARIZATION;
    let lu = reg.lu();
    let rcond = diag_ratio(lu.u().diagonal().iter().copied());
    match lu.solve(&rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) && rcond > 0.0 => Ok((
            x,
            SolveInfo {
                rcond,
                positive_definite: false,
                regularized: true,
            },
        )),
        _ => Err(Error::SingularKkt { rcond }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsRound {
    /// Energy with the smoothed sparsity penalty before and after the round.
    pub true_before: f64,
    pub true_after: f64,
    /// Quadratic surrogate with this round's `eta`, before and after.
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub solve: SolveInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationOutcome {
    pub alpha: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub rounds: Vec<IrlsRound>,
}

/// `n_irls` reweighting rounds starting from `alpha`.
pub fn segmentation_step(
    sub: &Subspace,
    inputs: &SegmentationInputs,
    coeffs: &EnergyCoefficients,
    alpha: &DMatrix<f64>,
    n_irls: usize,
) -> Result<SegmentationOutcome> {
    let mut alpha = alpha.clone();
    let mut w = sub.expand(&alpha);
    let energy = |w: &DMatrix<f64>, eta: Option<&DMatrix<f64>>| {
        segmentation_energy(w, inputs.v, coeffs, inputs.f, inputs.row_class, inputs.lap, inputs.d, eta)
    };
    let mut rounds = Vec::with_capacity(n_irls);
    let mut true_before = energy(&w, None);
    for _ in 0..n_irls {
        let eta = irls_weights(&w, coeffs.ell, coeffs.irls_epsilon);
        let surrogate_before = energy(&w, Some(&eta));
        let (next, solve) = solve_surrogate(sub, inputs, coeffs, &eta)?;
        let w_next = sub.expand(&next);
        let surrogate_after = energy(&w_next, Some(&eta));
        let true_after = energy(&w_next, None);
        rounds.push(IrlsRound {
            true_before,
            true_after,
            surrogate_before,
            surrogate_after,
            solve,
        });
        alpha = next;
        w = w_next;
        true_before = true_after;
    }
    Ok(SegmentationOutcome { alpha, w, rounds })
}
