//! Subject-level bootstrap for the regression coefficients.
//!
//! Subjects are resampled with replacement, keeping all their visits, and
//! the coefficients are re-estimated with the projection frozen at the
//! full-data estimate. Intervals are percentile or bias-corrected
//! percentile intervals.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{LcapError, Result};
use crate::estimation::{fit_coefficients_projected, FitConfig};
use crate::panel::{BlockDesign, Design, Panel};

/// Default number of bootstrap replicates.
pub const DEFAULT_REPLICATES: usize = 500;

/// Failure fraction above which a warning is emitted.
const FAILURE_WARN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDistribution {
    /// One `(beta0, beta1...)` row per successful replicate, in replicate
    /// order.
    pub replicates: Vec<DVector<f64>>,
    pub b: usize,
    pub seed: u64,
    pub gamma_fixed: DVector<f64>,
    pub failures: usize,
}

impl BootstrapDistribution {
    pub fn column(&self, index: usize) -> Vec<f64> {
        self.replicates.iter().map(|r| r[index]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Percentile,
    BiasCorrected,
    /// Normal-theory interval from a model-based standard error.
    Wald,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    /// The method actually applied (bias correction can fall back to
    /// percentile).
    pub method: IntervalMethod,
}

impl ConfidenceInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Subject indices of replicate `b`: `n` draws with replacement from a
/// stream derived from `(seed, b)`.
pub fn resample_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Design and sample projections of the resampled subjects.
fn resampled_projections(
    design: &Design,
    base_proj: &[f64],
    subjects: &[usize],
) -> Result<(Design, Vec<f64>)> {
    let mut blocks = Vec::new();
    let mut proj = Vec::new();
    let mut ids = Vec::with_capacity(subjects.len());
    for (new_i, &old_i) in subjects.iter().enumerate() {
        let range = design
            .subject_ranges
            .get(old_i)
            .ok_or_else(|| LcapError::Invalid(format!("subject index {old_i} out of range")))?;
        ids.push(format!("{}#{new_i}", design.subject_ids[old_i]));
        for k in range.clone() {
            let b = &design.blocks[k];
            blocks.push(BlockDesign {
                subject: new_i,
                ..b.clone()
            });
            proj.push(base_proj[k]);
        }
    }
    Ok((Design::new(blocks, ids, design.q)?, proj))
}

/// Coefficients `(beta0, beta1)` re-estimated on the listed subjects with
/// the projection fixed. `None` when the fit did not converge.
pub fn replicate_coefficients(
    panel: &Panel,
    gamma: &DVector<f64>,
    subjects: &[usize],
    config: &FitConfig,
) -> Result<Option<DVector<f64>>> {
    let base_proj = panel.sample.base_projections(gamma);
    replicate_from_projections(
        &panel.design,
        &base_proj,
        gamma.norm_squared(),
        subjects,
        config,
    )
}

fn replicate_from_projections(
    design: &Design,
    base_proj: &[f64],
    gamma_sq: f64,
    subjects: &[usize],
    config: &FitConfig,
) -> Result<Option<DVector<f64>>> {
    let (d, proj) = resampled_projections(design, base_proj, subjects)?;
    let fit = fit_coefficients_projected(&d, &proj, gamma_sq, config)?;
    if !fit.converged {
        return Ok(None);
    }
    let mut row = DVector::zeros(1 + fit.beta1.len());
    row[0] = fit.beta0;
    row.rows_mut(1, fit.beta1.len()).copy_from(&fit.beta1);
    Ok(Some(row))
}

/// Runs `b` bootstrap replicates with the projection frozen at `gamma_hat`.
/// Non-converged or failed replicates are counted in `failures` and left out.
pub fn bootstrap_coefficients(
    panel: &Panel,
    gamma_hat: &DVector<f64>,
    b: usize,
    config: &FitConfig,
    seed: u64,
) -> Result<BootstrapDistribution> {
    if b < 1 {
        return Err(LcapError::Invalid(
            "at least one bootstrap replicate required".into(),
        ));
    }
    config.validate()?;
    let gamma_sq = gamma_hat.norm_squared();
    if !(gamma_sq > 0.0) {
        return Err(LcapError::DegenerateProjection);
    }
    let base_proj = panel.sample.base_projections(gamma_hat);
    let n = panel.design.n();
    let rows: Vec<Option<DVector<f64>>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let idx = resample_indices(n, seed, rep);
            replicate_from_projections(&panel.design, &base_proj, gamma_sq, &idx, config)
                .ok()
                .flatten()
        })
        .collect();
    let failures = rows.iter().filter(|r| r.is_none()).count();
    if failures as f64 / b as f64 > FAILURE_WARN {
        log::warn!("{failures} of {b} bootstrap replicates failed to converge");
    }
    Ok(BootstrapDistribution {
        replicates: rows.into_iter().flatten().collect(),
        b,
        seed,
        gamma_fixed: gamma_hat.clone(),
        failures,
    })
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval from raw replicate values.
pub fn percentile_interval(values: &[f64], level: f64) -> Result<ConfidenceInterval> {
    check_level(level)?;
    let sorted = sorted_values(values)?;
    let alpha = 1.0 - level;
    Ok(ConfidenceInterval {
        lower: quantile_sorted(&sorted, alpha / 2.0),
        upper: quantile_sorted(&sorted, 1.0 - alpha / 2.0),
        level,
        method: IntervalMethod::Percentile,
    })
}

/// Bias-corrected percentile interval (no acceleration).
///
/// `z0 = Phi^{-1}(share of replicates below the estimate)`, counting ties as
/// half; the interval uses quantiles at `Phi(2 z0 + z_{alpha/2})` and
/// `Phi(2 z0 + z_{1-alpha/2})`. Falls back to the percentile interval when
/// `z0` is undefined.
pub fn bias_corrected_interval(
    values: &[f64],
    estimate: f64,
    level: f64,
) -> Result<ConfidenceInterval> {
    check_level(level)?;
    let sorted = sorted_values(values)?;
    let n = sorted.len() as f64;
    let below = sorted.iter().filter(|&&v| v < estimate).count() as f64;
    let ties = sorted.iter().filter(|&&v| v == estimate).count() as f64;
    let share = (below + 0.5 * ties) / n;
    let all_equal = sorted.first() == sorted.last();
    if all_equal || share <= 0.0 || share >= 1.0 {
        log::warn!("bias correction undefined (share below estimate {share}); using percentile");
        return percentile_interval(values, level);
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z0 = normal.inverse_cdf(share);
    let alpha = 1.0 - level;
    let lo_p = normal.cdf(2.0 * z0 + normal.inverse_cdf(alpha / 2.0));
    let hi_p = normal.cdf(2.0 * z0 + normal.inverse_cdf(1.0 - alpha / 2.0));
    Ok(ConfidenceInterval {
        lower: quantile_sorted(&sorted, lo_p),
        upper: quantile_sorted(&sorted, hi_p),
        level,
        method: IntervalMethod::BiasCorrected,
    })
}

/// Interval for coefficient `index` (0 is the intercept `beta0`).
pub fn confidence_interval(
    dist: &BootstrapDistribution,
    index: usize,
    level: f64,
    method: IntervalMethod,
    estimate: f64,
) -> Result<ConfidenceInterval> {
    if dist.replicates.is_empty() {
        return Err(LcapError::Invalid(
            "no successful bootstrap replicates".into(),
        ));
    }
    if index >= dist.replicates[0].len() {
        return Err(LcapError::Invalid(format!(
            "coefficient index {index} out of range"
        )));
    }
    let values = dist.column(index);
    match method {
        IntervalMethod::Percentile => percentile_interval(&values, level),
        IntervalMethod::BiasCorrected => bias_corrected_interval(&values, estimate, level),
        IntervalMethod::Wald => Err(LcapError::Invalid(
            "Wald intervals need a model-based standard error".into(),
        )),
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(LcapError::Invalid(format!(
            "level {level} must lie in (0, 1)"
        )));
    }
    Ok(())
}

fn sorted_values(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(LcapError::Invalid("no replicate values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(LcapError::Numerical("non-finite replicate value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_type7() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let ci = percentile_interval(&values, 0.95).unwrap();
        assert!((ci.lower - 3.475).abs() < 1e-12);
        assert!((ci.upper - 97.525).abs() < 1e-12);
    }

    #[test]
    fn median_centered_half_interval() {
        let values: Vec<f64> = (0..=100).map(f64::from).collect();
        let ci = percentile_interval(&values, 0.5).unwrap();
        assert!(ci.lower < 50.0 && 50.0 < ci.upper);
    }

    #[test]
    fn symmetric_bias_correction_matches_percentile() {
        let values: Vec<f64> = (-50..=50).map(|k| f64::from(k) * 0.1).collect();
        let bc = bias_corrected_interval(&values, 0.0, 0.9).unwrap();
        let pc = percentile_interval(&values, 0.9).unwrap();
        assert_eq!(bc.method, IntervalMethod::BiasCorrected);
        assert!((bc.lower - pc.lower).abs() < 1e-9);
        assert!((bc.upper - pc.upper).abs() < 1e-9);
    }

    #[test]
    fn identical_replicates_fall_back() {
        let ci = bias_corrected_interval(&[2.0; 10], 2.0, 0.95).unwrap();
        assert_eq!(ci.method, IntervalMethod::Percentile);
        assert_eq!((ci.lower, ci.upper), (2.0, 2.0));
    }

    #[test]
    fn invalid_level_rejected() {
        assert!(percentile_interval(&[1.0, 2.0], 1.0).is_err());
        assert!(percentile_interval(&[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn resampling_is_seeded() {
        assert_eq!(resample_indices(20, 7, 3), resample_indices(20, 7, 3));
        assert_ne!(resample_indices(20, 7, 3), resample_indices(20, 7, 4));
        assert!(resample_indices(20, 7, 0).iter().all(|&i| i < 20));
    }
}
