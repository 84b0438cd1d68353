//! Approximate negative hierarchical log-likelihood
//!
//! ```text
//! l = sum_iv (T_iv / 2) { eta_iv + d_iv exp(-eta_iv) }
//!   + sum_i { log(sigma2) / 2 + (beta0_i - beta0)^2 / (2 sigma2) },
//! eta_iv = beta0_i + x_iv' beta1,   d_iv = gamma' Sigma_iv gamma,
//! ```
//!
//! and its derivatives in the subject intercepts and the fixed effects.
//! Every function has a `*_projected` form taking the projected variances
//! `d_iv` directly; the estimators compute them once per iteration.

use nalgebra::{DMatrix, DVector};

use crate::covariance::CovarianceSet;
use crate::error::{LcapError, Result};
use crate::panel::{Design, Panel};

/// Exponents beyond this magnitude are reported; `exp` overflows near 709.
const EXPONENT_WARN: f64 = 700.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub gamma: DVector<f64>,
    pub beta0: f64,
    pub beta1: DVector<f64>,
    pub beta0i: DVector<f64>,
    pub sigma2: f64,
}

impl ModelParams {
    /// `beta0_i + x_iv' beta1` for every block.
    pub fn linear_predictors(&self, design: &Design) -> Vec<f64> {
        design
            .blocks
            .iter()
            .map(|b| self.beta0i[b.subject] + b.x.dot(&self.beta1))
            .collect()
    }

    /// Coefficient vector `(beta0, beta1)`.
    pub fn coefficients(&self) -> DVector<f64> {
        let mut c = DVector::zeros(1 + self.beta1.len());
        c[0] = self.beta0;
        c.rows_mut(1, self.beta1.len()).copy_from(&self.beta1);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodParts {
    pub conditional: f64,
    pub random_effect: f64,
    pub total: f64,
}

/// `d exp(-eta)` evaluated in log space.
pub(crate) fn scaled_ratio(d: f64, eta: f64) -> f64 {
    if eta.abs() > EXPONENT_WARN {
        log::warn!("linear predictor {eta:.1} is outside the safe exponent range");
    }
    if d > 0.0 {
        (d.ln() - eta).exp()
    } else {
        d * (-eta).exp()
    }
}

fn check_params(design: &Design, params: &ModelParams) -> Result<()> {
    if !(params.sigma2 > 0.0) {
        return Err(LcapError::Domain(format!(
            "sigma2 must be positive, got {}",
            params.sigma2
        )));
    }
    if params.beta0i.len() != design.n() {
        return Err(LcapError::Invalid(format!(
            "{} subject intercepts for {} subjects",
            params.beta0i.len(),
            design.n()
        )));
    }
    if params.beta1.len() != design.q {
        return Err(LcapError::Invalid(format!(
            "beta1 has length {}, expected q = {}",
            params.beta1.len(),
            design.q
        )));
    }
    Ok(())
}

pub fn neg_hloglik_projected(
    design: &Design,
    proj: &[f64],
    params: &ModelParams,
) -> Result<LikelihoodParts> {
    check_params(design, params)?;
    let eta = params.linear_predictors(design);
    let conditional: f64 = design
        .blocks
        .iter()
        .enumerate()
        .map(|(k, b)| 0.5 * b.t as f64 * (eta[k] + scaled_ratio(proj[k], eta[k])))
        .sum();
    let half_log = 0.5 * params.sigma2.ln();
    let random_effect: f64 = params
        .beta0i
        .iter()
        .map(|b| half_log + (b - params.beta0).powi(2) / (2.0 * params.sigma2))
        .sum();
    Ok(LikelihoodParts {
        conditional,
        random_effect,
        total: conditional + random_effect,
    })
}

pub fn neg_hloglik(
    panel: &Panel,
    sigma_hat: &CovarianceSet,
    params: &ModelParams,
) -> Result<LikelihoodParts> {
    let proj = sigma_hat.projections(&params.gamma);
    neg_hloglik_projected(&panel.design, &proj, params)
}

/// First and second derivative of `l` in `beta0_i`.
pub fn grad_hess_beta0i_projected(
    design: &Design,
    proj: &[f64],
    params: &ModelParams,
    subject: usize,
) -> Result<(f64, f64)> {
    check_params(design, params)?;
    let range = design
        .subject_ranges
        .get(subject)
        .ok_or_else(|| LcapError::Invalid(format!("subject index {subject} out of range")))?;
    let mut grad = (params.beta0i[subject] - params.beta0) / params.sigma2;
    let mut hess = 1.0 / params.sigma2;
    for k in range.clone() {
        let b = &design.blocks[k];
        let eta = params.beta0i[subject] + b.x.dot(&params.beta1);
        let r = scaled_ratio(proj[k], eta);
        let half_t = 0.5 * b.t as f64;
        grad += half_t * (1.0 - r);
        hess += half_t * r;
    }
    Ok((grad, hess))
}

pub fn grad_hess_beta0i(
    panel: &Panel,
    sigma_hat: &CovarianceSet,
    params: &ModelParams,
    subject: usize,
) -> Result<(f64, f64)> {
    let proj = sigma_hat.projections(&params.gamma);
    grad_hess_beta0i_projected(&panel.design, &proj, params, subject)
}

/// Gradient and Hessian of `l` in `beta1`.
pub fn grad_hess_beta1_projected(
    design: &Design,
    proj: &[f64],
    params: &ModelParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_params(design, params)?;
    let q = design.q;
    let mut grad = DVector::zeros(q);
    let mut hess = DMatrix::zeros(q, q);
    let eta = params.linear_predictors(design);
    for (k, b) in design.blocks.iter().enumerate() {
        let r = scaled_ratio(proj[k], eta[k]);
        let half_t = 0.5 * b.t as f64;
        grad.axpy(half_t * (1.0 - r), &b.x, 1.0);
        hess.ger(half_t * r, &b.x, &b.x, 1.0);
    }
    Ok((grad, hess))
}

pub fn grad_hess_beta1(
    panel: &Panel,
    sigma_hat: &CovarianceSet,
    params: &ModelParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let proj = sigma_hat.projections(&params.gamma);
    grad_hess_beta1_projected(&panel.design, &proj, params)
}

/// Closed-form minimizers of `l` in `(beta0, sigma2)`: the mean and the
/// population variance of the subject intercepts.
pub fn update_hyperparams(beta0i: &DVector<f64>) -> (f64, f64) {
    let n = beta0i.len() as f64;
    let beta0 = beta0i.sum() / n;
    let sigma2 = beta0i.iter().map(|b| (b - beta0).powi(2)).sum::<f64>() / n;
    (beta0, sigma2)
}
