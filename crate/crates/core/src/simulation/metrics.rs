//! Replicate-level scores and their aggregation.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::generator::SimTruth;
use crate::error::{LcapError, Result};
use crate::inference::ConfidenceInterval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lcap,
    CapMix,
}

impl Method {
    /// Name used in configuration files and reports.
    pub fn key(self) -> &'static str {
        match self {
            Method::Lcap => "lcap",
            Method::CapMix => "cap_mix",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lcap => "LCAP",
            Method::CapMix => "CAP-mix",
        })
    }
}

/// `|<a, b>| / (|a| |b|)`.
pub fn similarity(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let denom = a.norm() * b.norm();
    if denom > 0.0 {
        (a.dot(b) / denom).abs()
    } else {
        0.0
    }
}

/// Index of the estimated direction most similar to dimension `dim` of the
/// truth.
pub fn match_component(gammas: &[DVector<f64>], truth: &SimTruth, dim: usize) -> Option<usize> {
    let target = truth.direction(dim);
    gammas
        .iter()
        .map(|g| similarity(g, &target))
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}

/// Estimated quantities of one method on one replicate, for the matched
/// component.
#[derive(Debug, Clone)]
pub struct Estimate<'a> {
    pub gamma: &'a DVector<f64>,
    /// `(beta0, beta1...)`.
    pub coefficients: &'a DVector<f64>,
    /// Fitted `log(gamma' Sigma_iv gamma)` per block.
    pub log_eigen: &'a [f64],
    pub sigma2: f64,
    pub interval: Option<ConfidenceInterval>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub n: usize,
    pub v: usize,
    pub t: usize,
    pub p: usize,
    pub method: Method,
    pub replicate: usize,
    pub component: usize,
    pub estimate: f64,
    pub truth: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub covered: Option<bool>,
    pub similarity: f64,
    pub sigma2_hat: f64,
    pub sigma2_true: f64,
    pub eigen_mse: f64,
    pub converged: bool,
}

/// Scores an estimate against the truth on dimension `truth.target_dim`.
///
/// `coef_index` selects the coefficient (0 is the intercept, `c` the effect
/// of covariate `c`). Eigenvalues are compared as `exp(log_eigen) / |gamma|^2`
/// against `lambda_iv,j`, which puts the fitted variance on the scale of a
/// unit-norm direction.
pub fn score_estimate(
    est: &Estimate<'_>,
    truth: &SimTruth,
    coef_index: usize,
) -> Result<(f64, f64, f64, f64)> {
    let j = truth.target_dim;
    if coef_index == 0 || coef_index > truth.beta.ncols() {
        return Err(LcapError::Invalid(format!(
            "coefficient index {coef_index} does not name a covariate effect"
        )));
    }
    if est.log_eigen.len() != truth.log_lambda.len() {
        return Err(LcapError::Invalid(
            "one fitted eigenvalue per block required".into(),
        ));
    }
    let beta_true = truth.beta[(j - 1, coef_index - 1)];
    let gg = est.gamma.norm_squared();
    let eigen_mse = est
        .log_eigen
        .iter()
        .zip(&truth.log_lambda)
        .map(|(&l, ll)| (l.exp() / gg - ll[j - 1].exp()).powi(2))
        .sum::<f64>()
        / est.log_eigen.len() as f64;
    Ok((
        est.coefficients[coef_index],
        beta_true,
        similarity(est.gamma, &truth.direction(j)),
        eigen_mse,
    ))
}

/// Aggregate of one `(n, V, T, p, method)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub v: usize,
    pub t: usize,
    pub p: usize,
    pub method: Method,
    pub replications: usize,
    pub failures: usize,
    pub metrics: Vec<Metric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
}

impl MetricsReport {
    pub fn get(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).map(|m| m.value)
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Summarizes replicates of a single cell. `failures` counts replicates
/// that produced no outcome.
///
/// Metrics: `bias`, `mse`, `abs_error` of the coefficient, `coverage` (when
/// intervals exist), `similarity`, `sigma2_bias`, `sigma2_mse`,
/// `sigma2_abs_error`, `eigen_mse` and `converged` (share of converged fits).
pub fn evaluate_fit(outcomes: &[ReplicateOutcome], failures: usize) -> Result<MetricsReport> {
    let first = outcomes
        .first()
        .ok_or_else(|| LcapError::Invalid("no replicate outcomes to summarize".into()))?;
    let key = (first.n, first.v, first.t, first.p, first.method);
    if outcomes
        .iter()
        .any(|o| (o.n, o.v, o.t, o.p, o.method) != key)
    {
        return Err(LcapError::Invalid(
            "outcomes span more than one cell".into(),
        ));
    }
    let col = |f: &dyn Fn(&ReplicateOutcome) -> f64| outcomes.iter().map(f).collect::<Vec<_>>();
    let mut metrics = Vec::new();
    let mut push = |name: &str, xs: Vec<f64>| {
        let (value, stderr) = mean_se(&xs);
        metrics.push(Metric {
            name: name.to_string(),
            value,
            stderr,
        });
    };
    push("bias", col(&|o| o.estimate - o.truth));
    push("mse", col(&|o| (o.estimate - o.truth).powi(2)));
    push("abs_error", col(&|o| (o.estimate - o.truth).abs()));
    let covered: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.covered.map(|c| if c { 1.0 } else { 0.0 }))
        .collect();
    if !covered.is_empty() {
        push("coverage", covered);
    }
    push("similarity", col(&|o| o.similarity));
    push("sigma2_bias", col(&|o| o.sigma2_hat - o.sigma2_true));
    push(
        "sigma2_mse",
        col(&|o| (o.sigma2_hat - o.sigma2_true).powi(2)),
    );
    push(
        "sigma2_abs_error",
        col(&|o| (o.sigma2_hat - o.sigma2_true).abs()),
    );
    push("eigen_mse", col(&|o| o.eigen_mse));
    push("converged", col(&|o| if o.converged { 1.0 } else { 0.0 }));
    Ok(MetricsReport {
        n: key.0,
        v: key.1,
        t: key.2,
        p: key.3,
        method: key.4,
        replications: outcomes.len(),
        failures,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(estimate: f64, covered: bool) -> ReplicateOutcome {
        ReplicateOutcome {
            n: 10,
            v: 2,
            t: 5,
            p: 3,
            method: Method::Lcap,
            replicate: 0,
            component: 0,
            estimate,
            truth: 1.0,
            ci_lower: None,
            ci_upper: None,
            covered: Some(covered),
            similarity: 0.9,
            sigma2_hat: 0.02,
            sigma2_true: 0.01,
            eigen_mse: 0.5,
            converged: true,
        }
    }

    #[test]
    fn aggregates_by_hand() {
        let r = evaluate_fit(&[outcome(1.5, true), outcome(0.5, false)], 1).unwrap();
        assert_eq!(r.value("bias"), Some(0.0));
        assert_eq!(r.value("mse"), Some(0.25));
        assert_eq!(r.value("abs_error"), Some(0.5));
        assert_eq!(r.value("coverage"), Some(0.5));
        assert!((r.value("sigma2_bias").unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(r.get("bias").unwrap().stderr, 0.5);
        assert_eq!(r.failures, 1);
    }

    #[test]
    fn mixed_cells_rejected() {
        let mut b = outcome(1.0, true);
        b.method = Method::CapMix;
        assert!(evaluate_fit(&[outcome(1.0, true), b], 0).is_err());
    }

    #[test]
    fn similarity_is_sign_and_scale_free() {
        let a = DVector::from_vec(vec![1.0, 1.0]);
        let b = DVector::from_vec(vec![-3.0, -3.0]);
        assert!((similarity(&a, &b) - 1.0).abs() < 1e-15);
    }
}
