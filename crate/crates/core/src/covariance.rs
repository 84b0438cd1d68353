//! Sample covariances, the pooled linear shrinkage estimator and the
//! normalization matrix `H`.
//!
//! The shrunk estimate of block `(i, v)` is the convex combination
//!
//! ```text
//! S*_iv = rho * mu * I + (1 - rho) * S_iv,    rho = psi2 / delta2,
//! ```
//!
//! where `mu`, `psi2` and `delta2` are pooled over all blocks with weights
//! `1 / (n V_i)` and depend on the current projection and coefficients.
//! A [`CovarianceSet`] stores the sample matrices once and represents the
//! shrunk set as this affine map, so refreshing the shrinkage never copies
//! `p x p` matrices.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::data::VisitBlock;
use crate::error::{LcapError, Result};
use crate::likelihood::ModelParams;
use crate::linalg::{quad_form, sym_eigen_ascending, SINGULAR_RATIO};
use crate::panel::{Design, Panel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    Sample,
    Shrunk,
}

#[derive(Debug, Clone)]
pub struct CovarianceSet {
    base: Arc<Vec<DMatrix<f64>>>,
    weights: Arc<Vec<f64>>,
    /// Weighted mean of `base` with weights `T_iv`.
    pooled: Arc<DMatrix<f64>>,
    rho: f64,
    mu: f64,
    kind: CovarianceKind,
}

fn add_scaled(acc: &mut DMatrix<f64>, c: f64, m: &DMatrix<f64>) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(m.as_slice()) {
        *a += c * b;
    }
}

impl CovarianceSet {
    pub fn sample(matrices: Vec<DMatrix<f64>>, weights: Vec<f64>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| LcapError::Invalid("empty covariance set".into()))?;
        let p = first.nrows();
        if matrices.len() != weights.len() {
            return Err(LcapError::Invalid("one weight per matrix required".into()));
        }
        if matrices.iter().any(|m| m.nrows() != p || m.ncols() != p) {
            return Err(LcapError::Invalid(
                "covariance matrices differ in shape".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(LcapError::Invalid("total weight must be positive".into()));
        }
        let mut pooled = DMatrix::zeros(p, p);
        for (m, &w) in matrices.iter().zip(&weights) {
            add_scaled(&mut pooled, w, m);
        }
        pooled /= total;
        Ok(CovarianceSet {
            base: Arc::new(matrices),
            weights: Arc::new(weights),
            pooled: Arc::new(pooled),
            rho: 0.0,
            mu: 0.0,
            kind: CovarianceKind::Sample,
        })
    }

    pub fn kind(&self) -> CovarianceKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.pooled.nrows()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The underlying sample covariance of block `k`.
    pub fn base(&self, k: usize) -> &DMatrix<f64> {
        &self.base[k]
    }

    /// Materialized matrix of block `k`.
    pub fn matrix(&self, k: usize) -> DMatrix<f64> {
        self.affine(&self.base[k])
    }

    pub fn matrices(&self) -> Vec<DMatrix<f64>> {
        (0..self.len()).map(|k| self.matrix(k)).collect()
    }

    fn affine(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.rho == 0.0 {
            return m.clone();
        }
        let mut out = m * (1.0 - self.rho);
        for j in 0..out.nrows() {
            out[(j, j)] += self.rho * self.mu;
        }
        out
    }

    /// `gamma' S_k gamma` for every block, using the sample matrices.
    pub fn base_projections(&self, gamma: &DVector<f64>) -> Vec<f64> {
        self.base.iter().map(|m| quad_form(m, gamma)).collect()
    }

    /// Maps sample projections `gamma' S_k gamma` to projections of this set.
    pub fn project_from_base(&self, base_proj: f64, gamma_sq: f64) -> f64 {
        self.rho * self.mu * gamma_sq + (1.0 - self.rho) * base_proj
    }

    /// `gamma' Sigma_k gamma` for every block.
    pub fn projections(&self, gamma: &DVector<f64>) -> Vec<f64> {
        let gg = gamma.norm_squared();
        self.base_projections(gamma)
            .into_iter()
            .map(|b| self.project_from_base(b, gg))
            .collect()
    }

    /// `sum_k c_k Sigma_k`.
    pub fn weighted_sum(&self, coeffs: &[f64]) -> DMatrix<f64> {
        let p = self.dim();
        let mut acc = DMatrix::zeros(p, p);
        for (m, &c) in self.base.iter().zip(coeffs) {
            add_scaled(&mut acc, c, m);
        }
        acc *= 1.0 - self.rho;
        let diag = self.rho * self.mu * coeffs.iter().sum::<f64>();
        for j in 0..p {
            acc[(j, j)] += diag;
        }
        acc
    }

    /// `T`-weighted mean of the set.
    pub fn pooled(&self) -> DMatrix<f64> {
        self.affine(&self.pooled)
    }

    /// The sample covariances `S_k`, dropping any shrinkage.
    pub fn as_sample(&self) -> CovarianceSet {
        CovarianceSet {
            rho: 0.0,
            mu: 0.0,
            kind: CovarianceKind::Sample,
            ..self.clone()
        }
    }
}

/// `(1 / T) Y' Y` for a centered block.
pub fn sample_covariance(block: &VisitBlock) -> Result<DMatrix<f64>> {
    if !block.centered {
        return Err(LcapError::Precondition(format!(
            "block for subject {} visit {} is not centered",
            block.subject_id, block.visit
        )));
    }
    let t = block.n_rows();
    if t == 0 {
        return Err(LcapError::Invalid("empty block".into()));
    }
    let y = &block.observations;
    let mut s = y.tr_mul(y) / t as f64;
    // exact symmetry
    for r in 0..s.nrows() {
        for c in 0..r {
            s[(c, r)] = s[(r, c)];
        }
    }
    Ok(s)
}

/// Per-block shrinkage quantities `(delta2_iv, psi2_iv, phi2_iv)` with
/// `psi2_iv` already clamped to `delta2_iv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockShrinkage {
    pub delta2: f64,
    pub psi2: f64,
    pub phi2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageStats {
    pub mu: f64,
    pub delta2: f64,
    pub psi2: f64,
    pub phi2: f64,
    pub per_block: Vec<BlockShrinkage>,
    /// Shrinkage intensity `psi2 / delta2`, zero when `delta2 = 0`.
    pub rho: f64,
}

/// Shrinkage statistics from the sample projections `gamma' S_iv gamma`.
///
/// `log_scale` holds the fitted log-variances `w_iv' beta_i` of every block.
pub fn shrinkage_stats_projected(
    design: &Design,
    sample_proj: &[f64],
    gamma_sq: f64,
    log_scale: &[f64],
) -> Result<ShrinkageStats> {
    if !(gamma_sq > 0.0) {
        return Err(LcapError::DegenerateProjection);
    }
    let weights = design.pooling_weights();
    let fitted: Vec<f64> = log_scale.iter().map(|e| e.exp()).collect();
    let mu = weights.iter().zip(&fitted).map(|(w, f)| w * f).sum::<f64>() / gamma_sq;

    let target = mu * gamma_sq;
    let mut per_block = Vec::with_capacity(design.n_blocks());
    let (mut psi2, mut phi2) = (0.0, 0.0);
    for (k, block) in design.blocks.iter().enumerate() {
        let q = sample_proj[k];
        let delta_raw = (q - target).powi(2);
        let psi_raw = (q - fitted[k]).powi(2) / block.t as f64;
        let psi = psi_raw.min(delta_raw);
        let phi = delta_raw - psi;
        per_block.push(BlockShrinkage {
            delta2: phi + psi,
            psi2: psi,
            phi2: phi,
        });
        psi2 += weights[k] * psi;
        phi2 += weights[k] * phi;
    }
    let delta2 = phi2 + psi2;
    let rho = if delta2 > 0.0 { psi2 / delta2 } else { 0.0 };
    if !mu.is_finite() || !rho.is_finite() {
        return Err(LcapError::Numerical(format!(
            "non-finite shrinkage statistics (mu = {mu}, rho = {rho})"
        )));
    }
    Ok(ShrinkageStats {
        mu,
        delta2,
        psi2,
        phi2,
        per_block,
        rho,
    })
}

/// Shrinkage statistics at the projection and coefficients in `params`.
pub fn shrinkage_stats(
    panel: &Panel,
    sample: &CovarianceSet,
    params: &ModelParams,
) -> Result<ShrinkageStats> {
    if sample.kind() != CovarianceKind::Sample {
        return Err(LcapError::Precondition(
            "shrinkage statistics require the sample covariance set".into(),
        ));
    }
    let gg = params.gamma.norm_squared();
    if !(gg > 0.0) {
        return Err(LcapError::DegenerateProjection);
    }
    let proj = sample.base_projections(&params.gamma);
    let eta = params.linear_predictors(&panel.design);
    shrinkage_stats_projected(&panel.design, &proj, gg, &eta)
}

/// Applies the shrinkage `rho mu I + (1 - rho) S` to every block.
pub fn shrink_covariances(sample: &CovarianceSet, stats: &ShrinkageStats) -> CovarianceSet {
    let rho = stats.rho.clamp(0.0, 1.0);
    CovarianceSet {
        rho,
        mu: stats.mu,
        kind: CovarianceKind::Shrunk,
        ..sample.as_sample()
    }
}

/// Normalization matrix `H = sum T_iv Sigma_iv / sum T_iv`.
pub fn build_h(sigma_hat: &CovarianceSet) -> Result<DMatrix<f64>> {
    let h = sigma_hat.pooled();
    check_nonsingular(&h)?;
    Ok(h)
}

pub(crate) fn check_nonsingular(h: &DMatrix<f64>) -> Result<()> {
    let (vals, _) = sym_eigen_ascending(h);
    let n = vals.len();
    let (min, max) = (vals[0], vals[n - 1]);
    if !(max > 0.0) || !(min >= SINGULAR_RATIO * max) {
        return Err(LcapError::Numerical(format!(
            "normalization matrix H is numerically singular (eigenvalues in [{min:e}, {max:e}]); \
             use the shrinkage estimator"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::BlockDesign;
    use nalgebra::DVector;

    fn design(ts: &[usize], subjects: &[usize], n: usize) -> Design {
        let blocks = ts
            .iter()
            .zip(subjects)
            .enumerate()
            .map(|(k, (&t, &s))| BlockDesign {
                subject: s,
                visit: k as i64 + 1,
                t,
                x: DVector::zeros(0),
            })
            .collect();
        Design::new(blocks, (0..n).map(|i| i.to_string()).collect(), 0).unwrap()
    }

    #[test]
    fn sample_covariance_direct_formula() {
        let mut b = VisitBlock::new(
            "a",
            1,
            DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, 1.0]),
            DVector::zeros(0),
        );
        assert!(sample_covariance(&b).is_err());
        b.centered = true;
        let s = sample_covariance(&b).unwrap();
        assert_eq!(s, DMatrix::from_element(2, 2, 1.0));

        let r = 2f64.sqrt();
        let mut e = VisitBlock::new(
            "a",
            1,
            DMatrix::from_row_slice(2, 2, &[r, 0.0, 0.0, r]),
            DVector::zeros(0),
        );
        e.centered = true;
        let s = sample_covariance(&e).unwrap();
        assert!((s - DMatrix::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn exact_fit_gives_no_shrinkage() {
        let d = design(&[4, 4], &[0, 1], 2);
        let proj = [2.0, 3.0];
        let eta = [2f64.ln(), 3f64.ln()];
        let stats = shrinkage_stats_projected(&d, &proj, 1.0, &eta).unwrap();
        assert!(stats.per_block.iter().all(|b| b.psi2 < 1e-30));
        assert!(stats.psi2 < 1e-30);
        assert!(stats.rho < 1e-28);
    }

    #[test]
    fn degenerate_delta_sets_rho_zero() {
        let d = design(&[3], &[0], 1);
        let stats = shrinkage_stats_projected(&d, &[1.0], 1.0, &[0.0]).unwrap();
        assert_eq!(stats.mu, 1.0);
        assert_eq!(stats.delta2, 0.0);
        assert_eq!(stats.rho, 0.0);
    }

    #[test]
    fn zero_gamma_rejected() {
        let d = design(&[3], &[0], 1);
        assert!(matches!(
            shrinkage_stats_projected(&d, &[1.0], 0.0, &[0.0]),
            Err(LcapError::DegenerateProjection)
        ));
    }

    fn set_with(rho: f64, mu: f64, m: DMatrix<f64>) -> CovarianceSet {
        let s = CovarianceSet::sample(vec![m], vec![1.0]).unwrap();
        let stats = ShrinkageStats {
            mu,
            delta2: 1.0,
            psi2: rho,
            phi2: 1.0 - rho,
            per_block: vec![],
            rho,
        };
        shrink_covariances(&s, &stats)
    }

    #[test]
    fn shrinkage_limits() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(set_with(0.0, 3.0, m.clone()).matrix(0), m);
        let full = set_with(1.0, 2.0, m);
        assert_eq!(full.matrix(0), DMatrix::identity(2, 2) * 2.0);
    }

    #[test]
    fn shrinkage_hand_arithmetic() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let out = set_with(0.3, 1.5, m).matrix(0);
        assert!((out[(0, 0)] - 1.15).abs() < 1e-12);
        assert!((out[(1, 1)] - 3.25).abs() < 1e-12);
        assert_eq!(out[(0, 1)], 0.0);
    }

    #[test]
    fn h_of_identities_is_identity() {
        let s = CovarianceSet::sample(vec![DMatrix::identity(3, 3); 4], vec![1.0, 2.0, 5.0, 7.0])
            .unwrap();
        let h = build_h(&s).unwrap();
        assert!((h - DMatrix::identity(3, 3)).amax() < 1e-15);
    }

    #[test]
    fn h_is_t_weighted_mean() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 3.0]);
        let s = CovarianceSet::sample(vec![a.clone(), b.clone()], vec![1.0, 3.0]).unwrap();
        let h = build_h(&s).unwrap();
        assert!((h - (a + b * 3.0) / 4.0).amax() < 1e-15);
    }

    #[test]
    fn singular_h_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = CovarianceSet::sample(vec![a], vec![2.0]).unwrap();
        let err = build_h(&s).unwrap_err();
        assert!(err.to_string().contains("shrinkage"));
    }
}
