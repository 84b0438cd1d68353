//! Sequential extraction of components and the deviation-from-diagonality
//! stopping rule.

use nalgebra::{DMatrix, DVector};

use super::fit::{fit_single_component, FitConfig, FitResult};
use super::gamma::Orthogonality;
use crate::covariance::CovarianceSet;
use crate::error::{LcapError, Result};
use crate::panel::Panel;

/// Average deviation from diagonality of the projections in the columns of
/// `gamma`:
///
/// ```text
/// DfD = prod_iv [ det diag(G' S_iv G) / det(G' S_iv G) ]^(T_iv / sum T)
/// ```
///
/// computed in log space. Equals 1 when `G` diagonalizes every matrix.
pub fn dfd(gamma: &DMatrix<f64>, sigma_hat: &CovarianceSet) -> Result<f64> {
    let k = gamma.ncols();
    if k == 0 {
        return Err(LcapError::Invalid("no components".into()));
    }
    if k == 1 {
        return Ok(1.0);
    }
    let weights = sigma_hat.weights();
    let total: f64 = weights.iter().sum();
    let mut log_dfd = 0.0;
    for (idx, &w) in weights.iter().enumerate() {
        let s = sigma_hat.matrix(idx);
        let m = gamma.transpose() * &s * gamma;
        let m = (&m + m.transpose()) * 0.5;
        let chol = m.clone().cholesky().ok_or_else(|| {
            LcapError::Numerical(format!("projected covariance of block {idx} is singular"))
        })?;
        let l = chol.l();
        // log of prod_j m_jj / det(m), with det(m) = prod_j l_jj^2
        let mut log_ratio = 0.0;
        for j in 0..k {
            log_ratio += m[(j, j)].ln() - 2.0 * l[(j, j)].ln();
        }
        // Hadamard's inequality: the exact ratio is >= 1
        log_dfd += (w / total) * log_ratio.max(0.0);
    }
    Ok(log_dfd.exp())
}

/// Components extracted in order, with the DfD of each leading set.
#[derive(Debug, Clone)]
pub struct ComponentSet {
    pub components: Vec<FitResult>,
    /// `dfd_values[k - 1]` is the DfD of the first `k` components.
    pub dfd_values: Vec<f64>,
    /// Largest `k` whose DfD does not exceed the threshold.
    pub k_selected: usize,
    /// Metric of the orthogonality constraints (the first component's `H`).
    pub h: DMatrix<f64>,
}

impl ComponentSet {
    /// `p x k` matrix of the first `k` projections.
    pub fn gamma_matrix(&self, k: usize) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = self.components[..k]
            .iter()
            .map(|c| c.params.gamma.clone())
            .collect();
        DMatrix::from_columns(&cols)
    }

    pub fn selected(&self) -> &[FitResult] {
        &self.components[..self.k_selected]
    }
}

/// Extracts components one at a time, each orthogonal to its predecessors in
/// the first component's `H` metric, until the DfD of the extended set
/// exceeds `config.dfd_threshold` or `config.max_components` is reached.
///
/// DfD is evaluated on the first component's final covariance estimates.
pub fn fit_components(panel: &Panel, config: &FitConfig) -> Result<ComponentSet> {
    config.validate()?;
    let max_k = config.max_components.min(panel.p());
    let first = fit_single_component(panel, config, &Orthogonality::none())?;
    let metric = first.h.clone();
    let sigma_ref = first.sigma_hat.clone();
    let mut components = vec![first];
    let mut dfd_values = vec![1.0];
    let mut k_selected = 1;

    while components.len() < max_k {
        let basis: Vec<DVector<f64>> = components.iter().map(|c| c.params.gamma.clone()).collect();
        let orth = Orthogonality::to_basis(&basis, &metric);
        let next = fit_single_component(panel, config, &orth)?;
        components.push(next);
        let cols: Vec<DVector<f64>> = components.iter().map(|c| c.params.gamma.clone()).collect();
        let value = dfd(&DMatrix::from_columns(&cols), &sigma_ref)?;
        dfd_values.push(value);
        if value > config.dfd_threshold {
            break;
        }
        k_selected = components.len();
    }
    Ok(ComponentSet {
        components,
        dfd_values,
        k_selected,
        h: metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ms: Vec<DMatrix<f64>>) -> CovarianceSet {
        let w = vec![1.0; ms.len()];
        CovarianceSet::sample(ms, w).unwrap()
    }

    #[test]
    fn single_component_is_one() {
        let s = set(vec![DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])]);
        let g = DMatrix::from_column_slice(2, 1, &[0.3, 0.8]);
        assert_eq!(dfd(&g, &s).unwrap(), 1.0);
    }

    #[test]
    fn hand_computed_ratio() {
        let s = set(vec![DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])]);
        let g = DMatrix::identity(2, 2);
        assert!((dfd(&g, &s).unwrap() - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn common_eigenvectors_diagonalize() {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let u = DMatrix::from_row_slice(2, 2, &[c, c, c, -c]);
        let ms = vec![
            &u * DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0])) * u.transpose(),
            &u * DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0])) * u.transpose(),
        ];
        let v = dfd(&u, &set(ms)).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_projection_rejected() {
        let s = set(vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])]);
        assert!(dfd(&DMatrix::identity(2, 2), &s).is_err());
    }
}
