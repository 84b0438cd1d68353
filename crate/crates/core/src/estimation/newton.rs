//! Damped Newton steps for the subject intercepts and the fixed effects.
//!
//! A full Newton step is tried first and halved until the objective does not
//! increase; after [`MAX_HALVINGS`] failed halvings the parameter is left
//! unchanged.

use nalgebra::{DMatrix, DVector};

use crate::error::{LcapError, Result};
use crate::likelihood::{grad_hess_beta0i_projected, scaled_ratio, ModelParams};
use crate::linalg::sym_eigen_ascending;
use crate::panel::Design;

pub const MAX_HALVINGS: usize = 30;

/// Condition number above which the fixed-effect Hessian is regularized.
const MAX_CONDITION: f64 = 1e12;
const RIDGE: f64 = 1e-10;

/// The part of the objective that depends on `beta0_i`.
fn subject_objective(design: &Design, proj: &[f64], params: &ModelParams, i: usize, b: f64) -> f64 {
    let mut total = (b - params.beta0).powi(2) / (2.0 * params.sigma2);
    for k in design.subject_ranges[i].clone() {
        let blk = &design.blocks[k];
        let eta = b + blk.x.dot(&params.beta1);
        total += 0.5 * blk.t as f64 * (eta + scaled_ratio(proj[k], eta));
    }
    total
}

/// The part of the objective that depends on `beta1`.
fn fixed_effect_objective(
    design: &Design,
    proj: &[f64],
    beta0i: &DVector<f64>,
    beta1: &DVector<f64>,
) -> f64 {
    design
        .blocks
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let eta = beta0i[b.subject] + b.x.dot(beta1);
            0.5 * b.t as f64 * (eta + scaled_ratio(proj[k], eta))
        })
        .sum()
}

/// One damped Newton step for every subject intercept. The objective is
/// separable in the intercepts, so each subject is damped on its own terms.
pub fn newton_update_intercepts(
    design: &Design,
    proj: &[f64],
    params: &ModelParams,
    max_steps: usize,
) -> Result<DVector<f64>> {
    let mut out = params.beta0i.clone();
    let mut work = params.clone();
    for i in 0..design.n() {
        for _ in 0..max_steps.max(1) {
            work.beta0i[i] = out[i];
            let (g, h) = grad_hess_beta0i_projected(design, proj, &work, i)?;
            if !g.is_finite() || !h.is_finite() || h <= 0.0 {
                return Err(LcapError::Numerical(format!(
                    "non-finite intercept derivative for subject {}",
                    design.subject_ids[i]
                )));
            }
            if g == 0.0 {
                break;
            }
            let current = out[i];
            let before = subject_objective(design, proj, &work, i, current);
            let step = g / h;
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let candidate = current - scale * step;
                let after = subject_objective(design, proj, &work, i, candidate);
                if after <= before {
                    out[i] = candidate;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                break;
            }
        }
    }
    Ok(out)
}

/// Result of [`newton_update_fixed_effects`].
#[derive(Debug, Clone, PartialEq)]
pub struct FixedEffectStep {
    /// Common shift to add to `beta0` and every `beta0_i`.
    pub shift: f64,
    pub beta1: DVector<f64>,
}

/// One damped Newton step in `(c, beta1)`, where `c` moves `beta0` and all
/// subject intercepts together.
///
/// The random-effect term is invariant under the common shift, so the step
/// only involves the conditional part, with `w_iv = (1, x_iv)`. Without the
/// shift the intercept level cannot move once `sigma2` is near zero, since
/// each `beta0_i` is then pinned to `beta0` and `beta0` to their mean.
pub fn newton_update_fixed_effects(
    design: &Design,
    proj: &[f64],
    params: &ModelParams,
    max_steps: usize,
) -> Result<FixedEffectStep> {
    let q = design.q;
    let dim = q + 1;
    // theta = (c, beta1)
    let mut theta = DVector::zeros(dim);
    theta.rows_mut(1, q).copy_from(&params.beta1);
    let objective = |theta: &DVector<f64>| {
        let shifted = params.beta0i.add_scalar(theta[0]);
        fixed_effect_objective(design, proj, &shifted, &theta.rows(1, q).into_owned())
    };
    for _ in 0..max_steps.max(1) {
        let mut g = DVector::zeros(dim);
        let mut h = DMatrix::zeros(dim, dim);
        let mut w = DVector::zeros(dim);
        w[0] = 1.0;
        for (k, b) in design.blocks.iter().enumerate() {
            w.rows_mut(1, q).copy_from(&b.x);
            let eta = params.beta0i[b.subject] + theta[0] + b.x.dot(&theta.rows(1, q));
            let r = scaled_ratio(proj[k], eta);
            let half_t = 0.5 * b.t as f64;
            g.axpy(half_t * (1.0 - r), &w, 1.0);
            h.ger(half_t * r, &w, &w, 1.0);
        }
        if g.iter().chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(LcapError::Numerical(
                "non-finite fixed-effect derivative".into(),
            ));
        }
        if g.iter().all(|&v| v == 0.0) {
            break;
        }
        let (vals, _) = sym_eigen_ascending(&h);
        let (min, max) = (vals[0], vals[dim - 1]);
        if !(min > 0.0) || max / min > MAX_CONDITION {
            h += DMatrix::identity(dim, dim) * RIDGE;
        }
        let step = h
            .cholesky()
            .ok_or_else(|| {
                LcapError::Numerical("fixed-effect Hessian is singular after regularization".into())
            })?
            .solve(&g);
        let before = objective(&theta);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let candidate = &theta - &step * scale;
            if objective(&candidate) <= before {
                theta = candidate;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(FixedEffectStep {
        shift: theta[0],
        beta1: theta.rows(1, q).into_owned(),
    })
}
