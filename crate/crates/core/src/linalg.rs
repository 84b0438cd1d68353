//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{LcapError, Result};

/// Minimum eigenvalue ratio accepted before a matrix is called singular.
pub const SINGULAR_RATIO: f64 = 1e-10;

/// Symmetric eigendecomposition with eigenvalues in ascending order.
pub fn sym_eigen_ascending(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Returns `H^{-1/2}` (the symmetric root) after checking that `H` is
/// numerically positive definite.
pub fn inv_sqrt_spd(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen_ascending(h);
    let n = values.len();
    if n == 0 {
        return Err(LcapError::Numerical("empty matrix".into()));
    }
    let max = values[n - 1];
    let min = values[0];
    if !(max > 0.0) || !(min >= SINGULAR_RATIO * max) || !min.is_finite() {
        return Err(LcapError::Numerical(format!(
            "matrix is not positive definite (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    let scaled = DMatrix::from_fn(n, n, |r, c| vectors[(r, c)] / values[c].sqrt());
    Ok(&scaled * vectors.transpose())
}

/// `x' M x`.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Flips the sign so the largest-magnitude entry is positive; ties go to the
/// lowest index.
pub fn canonical_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = k;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_ascending() {
        let m = DMatrix::from_row_slice(3, 3, &[3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let (vals, vecs) = sym_eigen_ascending(&m);
        assert_eq!(vals.as_slice(), &[1.0, 2.0, 3.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_root_whitens() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let w = inv_sqrt_spd(&h).unwrap();
        let id = &w * &h * &w;
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn singular_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(inv_sqrt_spd(&h).is_err());
    }

    #[test]
    fn sign_canonicalization() {
        let mut v = DVector::from_vec(vec![0.5, -0.9, 0.1]);
        canonical_sign(&mut v);
        assert_eq!(v.as_slice(), &[-0.5, 0.9, -0.1]);
        let mut tie = DVector::from_vec(vec![-0.7, 0.7]);
        canonical_sign(&mut tie);
        assert_eq!(tie.as_slice(), &[0.7, -0.7]);
    }
}
