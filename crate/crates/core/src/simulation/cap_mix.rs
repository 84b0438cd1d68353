//! CAP-mix: a two-stage longitudinal baseline.
//!
//! 1. fit the cross-sectional model on each subject's first visit, which
//!    gives the projections and the shrinkage parameters `(rho, mu)`;
//! 2. score every block as `log(gamma' Sigma_iv gamma)`, where `Sigma_iv`
//!    is shrunk with the first-visit `(rho, mu)`;
//! 3. fit the scores with a random-intercept linear mixed model.

use nalgebra::DVector;

use super::lmm::{fit_random_intercept, LmmFit};
use crate::error::{LcapError, Result};
use crate::estimation::{fit_components, ComponentSet, FitConfig};
use crate::panel::Panel;

#[derive(Debug, Clone)]
pub struct CapMixComponent {
    pub gamma: DVector<f64>,
    pub rho: f64,
    pub mu: f64,
    pub scores: Vec<f64>,
    pub lmm: LmmFit,
}

#[derive(Debug, Clone)]
pub struct CapMixResult {
    /// The cross-sectional fit on first visits.
    pub first_visit: ComponentSet,
    /// One entry per selected first-visit component.
    pub components: Vec<CapMixComponent>,
}

/// `log(rho mu |gamma|^2 + (1 - rho) gamma' S_iv gamma)` for every block.
pub fn cap_mix_scores(panel: &Panel, gamma: &DVector<f64>, rho: f64, mu: f64) -> Result<Vec<f64>> {
    let gg = gamma.norm_squared();
    panel
        .sample
        .base_projections(gamma)
        .into_iter()
        .enumerate()
        .map(|(k, b)| {
            let d = rho * mu * gg + (1.0 - rho) * b;
            if d > 0.0 {
                Ok(d.ln())
            } else {
                let blk = &panel.design.blocks[k];
                Err(LcapError::Domain(format!(
                    "non-positive projected variance for subject {} visit {}",
                    panel.design.subject_ids[blk.subject], blk.visit
                )))
            }
        })
        .collect()
}

pub fn cap_mix_baseline(panel: &Panel, config: &FitConfig) -> Result<CapMixResult> {
    let first = panel.first_visits()?;
    let set = fit_components(&first, config)?;
    let components = set
        .selected()
        .iter()
        .map(|fit| {
            let (rho, mu) = fit.shrinkage.as_ref().map_or((0.0, 0.0), |s| (s.rho, s.mu));
            let gamma = fit.params.gamma.clone();
            let scores = cap_mix_scores(panel, &gamma, rho, mu)?;
            let lmm = fit_random_intercept(&panel.design, &scores)?;
            Ok(CapMixComponent {
                gamma,
                rho,
                mu,
                scores,
                lmm,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CapMixResult {
        first_visit: set,
        components,
    })
}
