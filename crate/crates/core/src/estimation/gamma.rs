//! The projection update: minimize `gamma' A gamma` subject to
//! `gamma' H gamma = 1` and optional linear orthogonality constraints.
//!
//! With `W = H^{-1/2}` and `z = H^{1/2} gamma` the problem becomes a
//! symmetric eigenproblem for `W A W` on the unit sphere, restricted to the
//! orthogonal complement of the whitened constraint vectors.

use nalgebra::{DMatrix, DVector};

use crate::covariance::CovarianceSet;
use crate::error::{LcapError, Result};
use crate::likelihood::{scaled_ratio, ModelParams};
use crate::linalg::{canonical_sign, inv_sqrt_spd, quad_form, sym_eigen_ascending, symmetrize};
use crate::panel::Panel;

/// Relative gap under which two smallest eigenvalues count as tied.
const TIE_TOL: f64 = 1e-10;

/// Linear constraints `c_j' gamma = 0`.
///
/// Orthogonality to earlier components in the metric `M` is expressed with
/// `c_j = M gamma_j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Orthogonality {
    pub covectors: Vec<DVector<f64>>,
}

impl Orthogonality {
    pub fn none() -> Self {
        Self::default()
    }

    /// Constraints making `gamma` `metric`-orthogonal to every vector in
    /// `basis`.
    pub fn to_basis(basis: &[DVector<f64>], metric: &DMatrix<f64>) -> Self {
        Orthogonality {
            covectors: basis.iter().map(|g| metric * g).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.covectors.is_empty()
    }

    /// Euclidean projection of `v` onto `{ x : c_j' x = 0 }`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for u in orthonormalize(&self.covectors) {
            let c = u.dot(&out);
            out.axpy(-c, &u, 1.0);
        }
        out
    }
}

/// Modified Gram-Schmidt, dropping numerically dependent vectors.
fn orthonormalize(vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        let scale = v.norm();
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let norm = w.norm();
        if norm > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            basis.push(w / norm);
        }
    }
    basis
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaSolution {
    pub gamma: DVector<f64>,
    /// `gamma' A gamma`, the smallest generalized eigenvalue on the feasible
    /// set.
    pub value: f64,
    /// True when the smallest eigenvalue was (near-)degenerate and the
    /// deterministic tie-break was applied.
    pub tied: bool,
}

/// Smallest generalized eigenvector of `(a, h)` on the constraint set,
/// scaled to `gamma' H gamma = 1` with canonical sign.
pub fn solve_min_generalized(
    a: &DMatrix<f64>,
    h: &DMatrix<f64>,
    orth: &Orthogonality,
) -> Result<GammaSolution> {
    let p = h.nrows();
    if a.nrows() != p || a.ncols() != p || h.ncols() != p {
        return Err(LcapError::Invalid(
            "A and H must be square of equal size".into(),
        ));
    }
    let w = inv_sqrt_spd(h)
        .map_err(|e| LcapError::Numerical(format!("H is not positive definite: {e}")))?;
    let m = symmetrize(&(&w * a * &w));

    // orthonormal basis of the feasible subspace in whitened coordinates
    let whitened: Vec<DVector<f64>> = orth.covectors.iter().map(|c| &w * c).collect();
    let constraints = orthonormalize(&whitened);
    if constraints.len() >= p {
        return Err(LcapError::Invalid(
            "orthogonality constraints leave no feasible direction".into(),
        ));
    }
    let q = if constraints.is_empty() {
        DMatrix::identity(p, p)
    } else {
        let mut proj = DMatrix::identity(p, p);
        for u in &constraints {
            proj.ger(-1.0, u, u, 1.0);
        }
        let (vals, vecs) = sym_eigen_ascending(&proj);
        let keep: Vec<usize> = (0..p).filter(|&k| vals[k] > 0.5).collect();
        DMatrix::from_fn(p, keep.len(), |r, c| vecs[(r, keep[c])])
    };

    let reduced = symmetrize(&(q.transpose() * &m * &q));
    let (vals, vecs) = sym_eigen_ascending(&reduced);
    let lambda = vals[0];
    let scale = vals.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let tied_count = vals
        .iter()
        .take_while(|&&v| v - lambda <= TIE_TOL * scale)
        .count();

    // columns: the H-orthonormal eigenvectors for the smallest eigenvalue
    let back = &w * &q;
    let z = &back * vecs.columns(0, tied_count);
    let mut gamma = if tied_count == 1 {
        z.column(0).into_owned()
    } else {
        log::warn!(
            "smallest generalized eigenvalue has multiplicity {tied_count}; applying tie-break"
        );
        let row_norms: Vec<f64> = (0..p).map(|r| z.row(r).norm()).collect();
        let max_norm = row_norms.iter().cloned().fold(0.0, f64::max);
        let c = row_norms
            .iter()
            .position(|&n| n > 1e-8 * max_norm)
            .unwrap_or(0);
        let coeffs = z.row(c).transpose();
        &z * coeffs
    };
    let norm = quad_form(h, &gamma).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(LcapError::Numerical("degenerate projection update".into()));
    }
    gamma /= norm;
    canonical_sign(&mut gamma);
    let value = quad_form(a, &gamma);
    Ok(GammaSolution {
        gamma,
        value,
        tied: tied_count > 1,
    })
}

/// `A = sum_iv (T_iv / 2) exp(-beta0_i - x_iv' beta1) Sigma_iv`.
pub fn gamma_objective_matrix(
    panel: &Panel,
    sigma_star: &CovarianceSet,
    params: &ModelParams,
) -> DMatrix<f64> {
    let eta = params.linear_predictors(&panel.design);
    let coeffs: Vec<f64> = panel
        .design
        .blocks
        .iter()
        .zip(&eta)
        .map(|(b, &e)| 0.5 * b.t as f64 * scaled_ratio(1.0, e))
        .collect();
    sigma_star.weighted_sum(&coeffs)
}

/// Projection update given the current coefficients.
pub fn update_gamma(
    panel: &Panel,
    sigma_star: &CovarianceSet,
    params: &ModelParams,
    h: &DMatrix<f64>,
    orth: &Orthogonality,
) -> Result<DVector<f64>> {
    let a = gamma_objective_matrix(panel, sigma_star, params);
    Ok(solve_min_generalized(&a, h, orth)?.gamma)
}
