//! Gaussian linear mixed model with a subject random intercept, fitted by
//! REML:
//!
//! ```text
//! y_iv = (1, x_iv') beta + b_i + e_iv,   b_i ~ N(0, tau2),   e_iv ~ N(0, sigma2_e).
//! ```
//!
//! The residual variance is profiled out, leaving a one-dimensional search
//! over the ratio `lambda = tau2 / sigma2_e`.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{LcapError, Result};
use crate::inference::{ConfidenceInterval, IntervalMethod};
use crate::panel::Design;

const LOG_RATIO_MIN: f64 = -25.0;
const LOG_RATIO_MAX: f64 = 15.0;
const GRID: usize = 81;
const GOLDEN_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LmmFit {
    /// `(intercept, covariate effects...)`.
    pub beta: DVector<f64>,
    pub cov_beta: DMatrix<f64>,
    pub sigma2_e: f64,
    pub tau2: f64,
    /// Predicted random intercepts (BLUPs), one per subject.
    pub random_effects: DVector<f64>,
    /// `-2` times the restricted log-likelihood, without constants.
    pub reml_deviance: f64,
}

impl LmmFit {
    pub fn stderr(&self, index: usize) -> f64 {
        self.cov_beta[(index, index)].sqrt()
    }

    /// Normal-theory interval `beta_k +- z se_k`.
    pub fn wald_interval(&self, index: usize, level: f64) -> Result<ConfidenceInterval> {
        if !(level > 0.0 && level < 1.0) {
            return Err(LcapError::Invalid(format!(
                "level {level} must lie in (0, 1)"
            )));
        }
        if index >= self.beta.len() {
            return Err(LcapError::Invalid(format!(
                "coefficient index {index} out of range"
            )));
        }
        let z = Normal::new(0.0, 1.0)
            .expect("standard normal")
            .inverse_cdf(0.5 + level / 2.0);
        let half = z * self.stderr(index);
        Ok(ConfidenceInterval {
            lower: self.beta[index] - half,
            upper: self.beta[index] + half,
            level,
            method: IntervalMethod::Wald,
        })
    }

    /// Fitted `x' beta + b_i` per block.
    pub fn fitted(&self, design: &Design) -> Vec<f64> {
        design
            .blocks
            .iter()
            .map(|b| {
                self.beta[0]
                    + self.beta.rows(1, design.q).dot(&b.x)
                    + self.random_effects[b.subject]
            })
            .collect()
    }
}

struct Profile {
    deviance: f64,
    beta: DVector<f64>,
    /// `(X' V0^{-1} X)^{-1}`, `V0 = V / sigma2_e`.
    xtvx_inv: DMatrix<f64>,
    sigma2_e: f64,
}

fn design_row(design: &Design, k: usize) -> DVector<f64> {
    let mut row = DVector::zeros(1 + design.q);
    row[0] = 1.0;
    row.rows_mut(1, design.q).copy_from(&design.blocks[k].x);
    row
}

/// Profiled REML deviance at variance ratio `lambda`.
fn profile(design: &Design, y: &[f64], rows: &[DVector<f64>], lambda: f64) -> Option<Profile> {
    let k = rows[0].len();
    let n_obs = y.len();
    let mut xtx = DMatrix::zeros(k, k);
    let mut xty = DVector::zeros(k);
    let mut logdet_v = 0.0;
    let mut weights = Vec::with_capacity(design.n());
    for range in &design.subject_ranges {
        let m = range.len() as f64;
        let c = lambda / (1.0 + lambda * m);
        weights.push(c);
        logdet_v += (1.0 + lambda * m).ln();
        let mut sx = DVector::zeros(k);
        let mut sy = 0.0;
        for b in range.clone() {
            xtx += &rows[b] * rows[b].transpose();
            xty += &rows[b] * y[b];
            sx += &rows[b];
            sy += y[b];
        }
        xtx -= &sx * sx.transpose() * c;
        xty -= sx * (c * sy);
    }
    let chol = xtx.clone().cholesky()?;
    let beta = chol.solve(&xty);
    let mut q = 0.0;
    for (range, c) in design.subject_ranges.iter().zip(&weights) {
        let mut sr = 0.0;
        for b in range.clone() {
            let r = y[b] - rows[b].dot(&beta);
            q += r * r;
            sr += r;
        }
        q -= c * sr * sr;
    }
    let dof = (n_obs - k) as f64;
    let sigma2_e = q.max(0.0) / dof;
    let logdet_xtx: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    Some(Profile {
        deviance: dof * sigma2_e.max(f64::MIN_POSITIVE).ln() + logdet_v + logdet_xtx,
        beta,
        xtvx_inv: chol.inverse(),
        sigma2_e,
    })
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > GOLDEN_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// REML fit of the random-intercept model to one response per block.
pub fn fit_random_intercept(design: &Design, y: &[f64]) -> Result<LmmFit> {
    if y.len() != design.n_blocks() {
        return Err(LcapError::Invalid(format!(
            "{} responses for {} blocks",
            y.len(),
            design.n_blocks()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(LcapError::Numerical(
            "non-finite mixed-model response".into(),
        ));
    }
    let k = 1 + design.q;
    if y.len() <= k {
        return Err(LcapError::Invalid(format!(
            "{} observations cannot identify {k} fixed effects and a residual variance",
            y.len()
        )));
    }
    let rows: Vec<DVector<f64>> = (0..design.n_blocks())
        .map(|b| design_row(design, b))
        .collect();
    let dev = |theta: f64| {
        profile(design, y, &rows, theta.exp())
            .map(|p| p.deviance)
            .unwrap_or(f64::INFINITY)
    };

    let step = (LOG_RATIO_MAX - LOG_RATIO_MIN) / (GRID - 1) as f64;
    let grid: Vec<f64> = (0..GRID).map(|g| LOG_RATIO_MIN + step * g as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&t| dev(t)).collect();
    let best = (0..GRID)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("non-empty grid");
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(GRID - 1)];
    let theta = golden_min(dev, lo, hi);

    let singular = || LcapError::Numerical("mixed model fixed-effects design is singular".into());
    let mut lambda = theta.exp();
    let mut fit = profile(design, y, &rows, lambda).ok_or_else(singular)?;
    let at_zero = profile(design, y, &rows, 0.0).ok_or_else(singular)?;
    if at_zero.deviance <= fit.deviance {
        lambda = 0.0;
        fit = at_zero;
    }

    let tau2 = lambda * fit.sigma2_e;
    let mut random_effects = DVector::zeros(design.n());
    for (i, range) in design.subject_ranges.iter().enumerate() {
        let m = range.len() as f64;
        let sr: f64 = range.clone().map(|b| y[b] - rows[b].dot(&fit.beta)).sum();
        random_effects[i] = lambda / (1.0 + lambda * m) * sr;
    }
    Ok(LmmFit {
        cov_beta: fit.xtvx_inv * fit.sigma2_e,
        beta: fit.beta,
        sigma2_e: fit.sigma2_e,
        tau2,
        random_effects,
        reml_deviance: fit.deviance,
    })
}
