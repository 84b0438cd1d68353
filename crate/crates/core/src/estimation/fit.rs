//! Block coordinate descent with multi-start selection.
//!
//! Each outer iteration refreshes the shrinkage estimate at the current
//! parameters, rebuilds `H`, then updates in order the subject intercepts,
//! the fixed effects, `(beta0, sigma2)` and the projection. Every update in
//! the second phase is non-increasing in the objective at fixed covariances.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gamma::{gamma_objective_matrix, solve_min_generalized, Orthogonality};
use super::newton::{newton_update_fixed_effects, newton_update_intercepts};
use crate::covariance::{
    build_h, shrink_covariances, shrinkage_stats_projected, CovarianceSet, ShrinkageStats,
};
use crate::error::{LcapError, Result};
use crate::likelihood::{neg_hloglik_projected, update_hyperparams, ModelParams};
use crate::linalg::{quad_form, sym_eigen_ascending};
use crate::panel::{Design, Panel};

/// Lower bound applied to `sigma2` during iteration.
pub const SIGMA2_FLOOR: f64 = 1e-10;
/// Initial random-intercept variance.
pub const SIGMA2_INIT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shrinkage {
    On,
    SampleOnly,
}

/// How the initial projections are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartStrategy {
    /// Eigenvectors of the pooled sample covariance in decreasing
    /// eigenvalue order, then random directions.
    Eigenvectors,
    /// The leading eigenvector, then random directions.
    LeadingEigenvector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_outer_iters: usize,
    /// Threshold on `|l_{s+1} - l_s| / (1 + |l_s|)`.
    pub tol: f64,
    pub n_starts: usize,
    pub starts: StartStrategy,
    /// Newton steps per block and outer iteration.
    pub newton_max_steps: usize,
    pub seed: u64,
    pub shrinkage: Shrinkage,
    pub dfd_threshold: f64,
    pub max_components: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_outer_iters: 500,
            tol: 1e-8,
            n_starts: 10,
            starts: StartStrategy::Eigenvectors,
            newton_max_steps: 1,
            seed: 0,
            shrinkage: Shrinkage::On,
            dfd_threshold: 2.0,
            max_components: 5,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters < 1 {
            return Err(LcapError::Invalid("max_outer_iters: must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(LcapError::Invalid("tol: must be positive".into()));
        }
        if self.n_starts < 1 {
            return Err(LcapError::Invalid("n_starts: must be >= 1".into()));
        }
        if !(self.dfd_threshold > 1.0) {
            return Err(LcapError::Invalid("dfd_threshold: must exceed 1".into()));
        }
        if self.max_components < 1 {
            return Err(LcapError::Invalid("max_components: must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub objective: f64,
    /// Objective at the initial values followed by one value per outer
    /// iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub start_index: usize,
    /// Normalization matrix used in the last projection update.
    pub h: DMatrix<f64>,
    /// Covariance estimates of the last iteration.
    pub sigma_hat: CovarianceSet,
    pub shrinkage: Option<ShrinkageStats>,
}

/// Shrunk (or sample) covariance set at the given parameters.
pub(crate) fn refresh_covariances(
    panel: &Panel,
    shrinkage: Shrinkage,
    base_proj: &[f64],
    gamma_sq: f64,
    params: &ModelParams,
) -> Result<(CovarianceSet, Option<ShrinkageStats>)> {
    match shrinkage {
        Shrinkage::SampleOnly => Ok((panel.sample.clone(), None)),
        Shrinkage::On => {
            let eta = params.linear_predictors(&panel.design);
            let stats = shrinkage_stats_projected(&panel.design, base_proj, gamma_sq, &eta)?;
            Ok((shrink_covariances(&panel.sample, &stats), Some(stats)))
        }
    }
}

fn relative_change(prev: f64, next: f64) -> f64 {
    (next - prev).abs() / (1.0 + prev.abs())
}

/// Runs the iteration from one initial projection.
pub fn fit_from_start(
    panel: &Panel,
    config: &FitConfig,
    orth: &Orthogonality,
    gamma0: &DVector<f64>,
    start_index: usize,
) -> Result<FitResult> {
    let design = &panel.design;
    let pooled = panel.sample.pooled();
    let mut gamma = gamma0.clone();
    let scale = quad_form(&pooled, &gamma);
    let norm = if scale > 0.0 {
        scale.sqrt()
    } else {
        gamma.norm()
    };
    if !(norm > 0.0) {
        return Err(LcapError::DegenerateProjection);
    }
    gamma /= norm;

    let log_pooled = quad_form(&pooled, &gamma).max(f64::MIN_POSITIVE).ln();
    let mut params = ModelParams {
        gamma: gamma.clone(),
        beta0: log_pooled,
        beta1: DVector::zeros(design.q),
        beta0i: DVector::from_element(design.n(), log_pooled),
        sigma2: SIGMA2_INIT,
    };

    let mut base_proj = panel.sample.base_projections(&params.gamma);
    let mut gg = params.gamma.norm_squared();
    let (sigma0, _) = refresh_covariances(panel, config.shrinkage, &base_proj, gg, &params)?;
    let proj0: Vec<f64> = base_proj
        .iter()
        .map(|&b| sigma0.project_from_base(b, gg))
        .collect();
    let mut trace = vec![neg_hloglik_projected(design, &proj0, &params)?.total];

    let mut converged = false;
    let mut iterations = 0;
    let mut last = None;
    for _ in 0..config.max_outer_iters {
        iterations += 1;
        let (sigma, stats) = refresh_covariances(panel, config.shrinkage, &base_proj, gg, &params)?;
        let h = build_h(&sigma)?;
        let proj: Vec<f64> = base_proj
            .iter()
            .map(|&b| sigma.project_from_base(b, gg))
            .collect();

        params.beta0i = newton_update_intercepts(design, &proj, &params, config.newton_max_steps)?;
        let step = newton_update_fixed_effects(design, &proj, &params, config.newton_max_steps)?;
        params.beta0i.add_scalar_mut(step.shift);
        params.beta1 = step.beta1;
        let (beta0, sigma2) = update_hyperparams(&params.beta0i);
        params.beta0 = beta0;
        params.sigma2 = sigma2.max(SIGMA2_FLOOR);

        let a = gamma_objective_matrix(panel, &sigma, &params);
        params.gamma = solve_min_generalized(&a, &h, orth)?.gamma;

        base_proj = panel.sample.base_projections(&params.gamma);
        gg = params.gamma.norm_squared();
        let proj: Vec<f64> = base_proj
            .iter()
            .map(|&b| sigma.project_from_base(b, gg))
            .collect();
        let value = neg_hloglik_projected(design, &proj, &params)?.total;
        if !value.is_finite() {
            return Err(LcapError::Numerical(format!(
                "objective became non-finite at iteration {iterations} (start {start_index})"
            )));
        }
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(value);
        last = Some((h, sigma, stats));
        if relative_change(prev, value) < config.tol {
            converged = true;
            break;
        }
    }
    let (h, sigma_hat, shrinkage) = last.expect("at least one iteration");
    Ok(FitResult {
        objective: *trace.last().expect("non-empty"),
        params,
        objective_trace: trace,
        converged,
        iterations,
        start_index,
        h,
        sigma_hat,
        shrinkage,
    })
}

/// Initial projections: eigenvectors of the pooled sample covariance in
/// decreasing eigenvalue order (all of them, or only the leading one),
/// projected onto the constraint set, followed by seeded random directions.
/// Each start is later scaled to `gamma' S_bar gamma = 1`.
pub fn initial_projections(
    panel: &Panel,
    n_starts: usize,
    strategy: StartStrategy,
    seed: u64,
    orth: &Orthogonality,
) -> Vec<DVector<f64>> {
    let p = panel.p();
    let (vals, vecs) = sym_eigen_ascending(&panel.sample.pooled());
    let n_eigen = match strategy {
        StartStrategy::Eigenvectors => n_starts,
        StartStrategy::LeadingEigenvector => 1.min(n_starts),
    };
    let mut starts = Vec::with_capacity(n_starts);
    for k in (0..p).rev() {
        if starts.len() == n_eigen || vals[k] <= 0.0 {
            break;
        }
        let v = orth.project(&vecs.column(k).into_owned());
        if v.norm() > 1e-6 {
            starts.push(v);
        }
    }
    let mut stream = 0u64;
    while starts.len() < n_starts {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        stream += 1;
        let raw = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let v = orth.project(&raw);
        if v.norm() > 1e-6 {
            starts.push(v);
        }
    }
    starts
}

fn select_best(results: Vec<Result<FitResult>>) -> Result<FitResult> {
    let mut failures = Vec::new();
    let mut best: Option<FitResult> = None;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(fit) if fit.objective.is_finite() => {
                let better = best
                    .as_ref()
                    .is_none_or(|b| fit.objective.total_cmp(&b.objective).is_lt());
                if better {
                    best = Some(fit);
                }
            }
            Ok(fit) => failures.push(format!("start {k}: objective {}", fit.objective)),
            Err(e) => failures.push(format!("start {k}: {e}")),
        }
    }
    best.ok_or_else(|| LcapError::Numerical(format!("all starts failed: {}", failures.join("; "))))
}

/// Best-of-`n_starts` fit of one component subject to `orth`.
pub fn fit_single_component(
    panel: &Panel,
    config: &FitConfig,
    orth: &Orthogonality,
) -> Result<FitResult> {
    config.validate()?;
    let starts = initial_projections(panel, config.n_starts, config.starts, config.seed, orth);
    let results: Vec<Result<FitResult>> = starts
        .par_iter()
        .enumerate()
        .map(|(k, g0)| fit_from_start(panel, config, orth, g0, k))
        .collect();
    select_best(results)
}

/// Coefficients from a fit with the projection held fixed.
#[derive(Debug, Clone)]
pub struct CoefficientFit {
    pub beta0: f64,
    pub beta1: DVector<f64>,
    pub beta0i: DVector<f64>,
    pub sigma2: f64,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub shrinkage: Option<ShrinkageStats>,
}

/// Fixed-projection fit from the sample projections `gamma' S_iv gamma`.
///
/// With the projection frozen every quantity of the iteration is a scalar per
/// block, which keeps bootstrap replicates cheap.
pub fn fit_coefficients_projected(
    design: &Design,
    base_proj: &[f64],
    gamma_sq: f64,
    config: &FitConfig,
) -> Result<CoefficientFit> {
    if !(gamma_sq > 0.0) {
        return Err(LcapError::DegenerateProjection);
    }
    let n = design.n();
    let mut beta0i = DVector::zeros(n);
    for i in 0..n {
        let range = design.subject_ranges[i].clone();
        let len = range.len() as f64;
        let mean = range.map(|k| base_proj[k]).sum::<f64>() / len;
        beta0i[i] = mean.max(f64::MIN_POSITIVE).ln();
    }
    let mut params = ModelParams {
        gamma: DVector::zeros(0),
        beta0: beta0i.sum() / n as f64,
        beta1: DVector::zeros(design.q),
        beta0i,
        sigma2: SIGMA2_INIT,
    };

    let shrunk = |params: &ModelParams| -> Result<(Vec<f64>, Option<ShrinkageStats>)> {
        match config.shrinkage {
            Shrinkage::SampleOnly => Ok((base_proj.to_vec(), None)),
            Shrinkage::On => {
                let eta = params.linear_predictors(design);
                let stats = shrinkage_stats_projected(design, base_proj, gamma_sq, &eta)?;
                let proj = base_proj
                    .iter()
                    .map(|&b| stats.rho * stats.mu * gamma_sq + (1.0 - stats.rho) * b)
                    .collect();
                Ok((proj, Some(stats)))
            }
        }
    };

    let (proj0, _) = shrunk(&params)?;
    let mut trace = vec![neg_hloglik_projected(design, &proj0, &params)?.total];
    let mut converged = false;
    let mut iterations = 0;
    let mut last_stats = None;
    for _ in 0..config.max_outer_iters {
        iterations += 1;
        let (proj, stats) = shrunk(&params)?;
        params.beta0i = newton_update_intercepts(design, &proj, &params, config.newton_max_steps)?;
        let step = newton_update_fixed_effects(design, &proj, &params, config.newton_max_steps)?;
        params.beta0i.add_scalar_mut(step.shift);
        params.beta1 = step.beta1;
        let (beta0, sigma2) = update_hyperparams(&params.beta0i);
        params.beta0 = beta0;
        params.sigma2 = sigma2.max(SIGMA2_FLOOR);
        let value = neg_hloglik_projected(design, &proj, &params)?.total;
        if !value.is_finite() {
            return Err(LcapError::Numerical(format!(
                "objective became non-finite at iteration {iterations}"
            )));
        }
        let prev = *trace.last().expect("non-empty");
        trace.push(value);
        last_stats = stats;
        if relative_change(prev, value) < config.tol {
            converged = true;
            break;
        }
    }
    Ok(CoefficientFit {
        beta0: params.beta0,
        beta1: params.beta1,
        beta0i: params.beta0i,
        sigma2: params.sigma2,
        objective: *trace.last().expect("non-empty"),
        objective_trace: trace,
        converged,
        iterations,
        shrinkage: last_stats,
    })
}

/// Coefficient fit with the projection held fixed at `gamma`: the same
/// iteration without the projection update.
pub fn fit_coefficients(
    panel: &Panel,
    gamma: &DVector<f64>,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    let base_proj = panel.sample.base_projections(gamma);
    let fit = fit_coefficients_projected(&panel.design, &base_proj, gamma.norm_squared(), config)?;
    let sigma_hat = match &fit.shrinkage {
        Some(stats) => shrink_covariances(&panel.sample, stats),
        None => panel.sample.clone(),
    };
    Ok(FitResult {
        params: ModelParams {
            gamma: gamma.clone(),
            beta0: fit.beta0,
            beta1: fit.beta1,
            beta0i: fit.beta0i,
            sigma2: fit.sigma2,
        },
        objective: fit.objective,
        objective_trace: fit.objective_trace,
        converged: fit.converged,
        iterations: fit.iterations,
        start_index: 0,
        h: sigma_hat.pooled(),
        sigma_hat,
        shrinkage: fit.shrinkage,
    })
}
