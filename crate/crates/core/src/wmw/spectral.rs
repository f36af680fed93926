//! Weighted eigen-decomposition of covariance operators.
//!
//! A covariance `M` of coefficient vectors is decomposed in the metric of the
//! grid weights `W`: `M W psi_k = lambda_k psi_k` with `psi_j' W psi_k = delta_jk`,
//! so that `M = sum_k lambda_k psi_k psi_k'` and a Gaussian element with
//! covariance `M` has squared (weighted L2) norm `sum_k lambda_k z_k^2`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Eigenvalue truncation applied unless configured otherwise, relative to the
/// largest eigenvalue.
pub const DEFAULT_TRUNC_TOL: f64 = 1e-10;

/// Retained eigenpairs of a covariance operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralModel {
    /// Strictly positive, descending.
    pub eigenvalues: Vec<f64>,
    /// `d x retained`, columns orthonormal in the weighted inner product.
    #[serde(skip)]
    pub eigenvectors: DMatrix<f64>,
    pub retained: usize,
    pub trunc_tol: f64,
    /// Sum of all positive eigenvalues, retained or not.
    pub total_variance: f64,
    #[serde(skip)]
    pub(crate) weights: Vec<f64>,
}

impl SpectralModel {
    pub fn empty(weights: &[f64], trunc_tol: f64) -> Self {
        Self {
            eigenvalues: Vec::new(),
            eigenvectors: DMatrix::zeros(weights.len(), 0),
            retained: 0,
            trunc_tol,
            total_variance: 0.0,
            weights: weights.to_vec(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.retained == 0
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted inner products `<v, psi_k>_W` for every retained component.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let wv: Vec<f64> = v.iter().zip(&self.weights).map(|(a, w)| a * w).collect();
        (0..self.retained)
            .map(|k| {
                self.eigenvectors
                    .column(k)
                    .iter()
                    .zip(&wv)
                    .map(|(p, x)| p * x)
                    .sum()
            })
            .collect()
    }

    /// `sum_k lambda_k psi_k psi_k'`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        for (k, &lambda) in self.eigenvalues.iter().enumerate() {
            let col = self.eigenvectors.column(k);
            out.ger(lambda, &col, &col, 1.0);
        }
        out
    }

    /// Largest deviation of `Psi' W Psi` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..self.retained {
            for k in 0..=j {
                let ip: f64 = (0..self.dim())
                    .map(|i| self.weights[i] * self.eigenvectors[(i, j)] * self.eigenvectors[(i, k)])
                    .sum();
                let target = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((ip - target).abs());
            }
        }
        worst
    }
}

fn check_weights(d: usize, weights: &[f64]) -> Result<()> {
    if weights.len() != d {
        return Err(invalid(
            "weights",
            format!("expected {d} weights, got {}", weights.len()),
        ));
    }
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(invalid("weights", "weights must be positive and finite"));
    }
    Ok(())
}

/// Flips each column so its largest-magnitude coordinate is positive.
fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0.0_f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Sorted (descending) positive eigenpairs of a symmetric matrix, keeping
/// those above `trunc_tol * lambda_max`.
fn sorted_positive(eig: SymmetricEigen<f64, nalgebra::Dyn>, trunc_tol: f64) -> (Vec<f64>, Vec<usize>, f64) {
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = order.first().map_or(0.0, |&i| eig.eigenvalues[i]);
    let total: f64 = eig.eigenvalues.iter().filter(|&&l| l > 0.0).sum();
    if !(top > 0.0) {
        return (Vec::new(), Vec::new(), 0.0);
    }
    let cut = trunc_tol * top;
    let keep: Vec<usize> = order
        .into_iter()
        .take_while(|&i| eig.eigenvalues[i] > cut && eig.eigenvalues[i] > 0.0)
        .collect();
    (keep.iter().map(|&i| eig.eigenvalues[i]).collect(), keep, total)
}

/// Decomposes a symmetric `d x d` covariance in the metric of `weights`.
pub fn spectral_decompose(m: &DMatrix<f64>, weights: &[f64], trunc_tol: f64) -> Result<SpectralModel> {
    if !m.is_square() {
        return Err(invalid("matrix", "must be square"));
    }
    let d = m.nrows();
    check_weights(d, weights)?;
    if !(trunc_tol >= 0.0) {
        return Err(invalid("trunc_tol", "must be nonnegative"));
    }
    let scale = m.amax();
    let asymmetry = (m - m.transpose()).amax();
    if asymmetry > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NonSymmetric { asymmetry });
    }
    if d == 0 || scale == 0.0 {
        return Ok(SpectralModel::empty(weights, trunc_tol));
    }
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut mw = DMatrix::from_fn(d, d, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]) * sw[i] * sw[j]);
    mw.fill_lower_triangle_with_upper_triangle();
    let eig = SymmetricEigen::new(mw);
    let vecs = eig.eigenvectors.clone();
    let (values, keep, total) = sorted_positive(eig, trunc_tol);
    let mut eigenvectors = DMatrix::from_fn(d, keep.len(), |i, k| vecs[(i, keep[k])] / sw[i]);
    fix_signs(&mut eigenvectors);
    Ok(SpectralModel {
        retained: values.len(),
        eigenvalues: values,
        eigenvectors,
        trunc_tol,
        total_variance: total,
        weights: weights.to_vec(),
    })
}

/// Decomposes `M = A A'` from its `d x r` factor through the `r x r` Gram
/// matrix `A' W A`; this costs `O(d r^2)` instead of `O(d^3)`.
pub fn spectral_from_factor(a: &DMatrix<f64>, weights: &[f64], trunc_tol: f64) -> Result<SpectralModel> {
    let d = a.nrows();
    check_weights(d, weights)?;
    if a.ncols() == 0 || a.amax() == 0.0 {
        return Ok(SpectralModel::empty(weights, trunc_tol));
    }
    let mut wa = a.clone();
    for (i, mut row) in wa.row_iter_mut().enumerate() {
        row *= weights[i];
    }
    let mut gram = a.transpose() * &wa;
    gram.fill_lower_triangle_with_upper_triangle();
    let eig = SymmetricEigen::new(gram);
    let vecs = eig.eigenvectors.clone();
    let (values, keep, total) = sorted_positive(eig, trunc_tol);
    let mut eigenvectors = DMatrix::zeros(d, keep.len());
    for (k, (&col, &lambda)) in keep.iter().zip(&values).enumerate() {
        let v = a * vecs.column(col);
        eigenvectors.set_column(k, &(v / lambda.sqrt()));
    }
    fix_signs(&mut eigenvectors);
    Ok(SpectralModel {
        retained: values.len(),
        eigenvalues: values,
        eigenvectors,
        trunc_tol,
        total_variance: total,
        weights: weights.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn diagonal_matrix() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0, 0.0]));
        let s = spectral_decompose(&m, &[1.0; 3], 1e-10).unwrap();
        assert_eq!(s.retained, 2);
        assert!((s.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((s.eigenvalues[1] - 1.0).abs() < 1e-14);
        // sign convention: dominant coordinate positive
        assert!((s.eigenvectors[(1, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identity_matrix() {
        let s = spectral_decompose(&DMatrix::identity(5, 5), &[1.0; 5], 1e-10).unwrap();
        assert_eq!(s.retained, 5);
        assert!(s.eigenvalues.iter().all(|l| (l - 1.0).abs() < 1e-14));
        assert!(s.orthonormality_error() < 1e-12);
    }

    #[test]
    fn non_symmetric_rejected() {
        let mut m = DMatrix::identity(3, 3);
        m[(0, 1)] = 0.5;
        assert!(matches!(
            spectral_decompose(&m, &[1.0; 3], 1e-10),
            Err(Error::NonSymmetric { .. })
        ));
    }

    #[test]
    fn rank_two_gram_matrix() {
        let mut rng = crate::rng::stream(5, &[]);
        let d = 12;
        let a = DMatrix::from_fn(2, d, |_, _| rng.random_range(-1.0..1.0));
        let m = a.transpose() * &a;
        for weights in [vec![1.0; d], (0..d).map(|i| 0.5 + i as f64 / d as f64).collect()] {
            let s = spectral_decompose(&m, &weights, 1e-10).unwrap();
            assert_eq!(s.retained, 2);
            assert!((s.reconstruct() - &m).amax() <= 1e-8);
            assert!(s.orthonormality_error() < 1e-8);
        }
    }

    #[test]
    fn factor_route_matches_dense_route() {
        let mut rng = crate::rng::stream(9, &[]);
        let d = 30;
        let r = 7;
        let a = DMatrix::from_fn(d, r, |_, _| rng.random_range(-1.0..1.0));
        let weights: Vec<f64> = (0..d).map(|i| 0.2 + (i % 4) as f64 * 0.3).collect();
        let dense = spectral_decompose(&(&a * a.transpose()), &weights, 1e-10).unwrap();
        let fact = spectral_from_factor(&a, &weights, 1e-10).unwrap();
        assert_eq!(dense.retained, r);
        assert_eq!(fact.retained, r);
        for k in 0..r {
            assert!((dense.eigenvalues[k] - fact.eigenvalues[k]).abs() < 1e-10 * dense.eigenvalues[0]);
            let diff = (dense.eigenvectors.column(k) - fact.eigenvectors.column(k)).amax();
            assert!(diff < 1e-7, "component {k}: {diff}");
        }
        assert!(fact.orthonormality_error() < 1e-10);
    }

    #[test]
    fn weighted_eigenvalues_of_brownian_kernel() {
        use crate::fspace::{Grid, WeightMode};
        let g = Grid::unit(250, WeightMode::Trapezoid).unwrap();
        let t = g.points();
        let m = DMatrix::from_fn(250, 250, |i, j| t[i].min(t[j]));
        let s = spectral_decompose(&m, g.weights(), 1e-10).unwrap();
        for k in 1..=5 {
            let exact = ((k as f64 - 0.5) * std::f64::consts::PI).powi(-2);
            let rel = (s.eigenvalues[k - 1] - exact).abs() / exact;
            assert!(rel < 0.01, "k={k} rel={rel}");
        }
    }

    #[test]
    fn zero_matrix_gives_empty_model() {
        let s = spectral_decompose(&DMatrix::zeros(4, 4), &[1.0; 4], 1e-10).unwrap();
        assert!(s.is_empty());
        let f = spectral_from_factor(&DMatrix::zeros(4, 3), &[1.0; 4], 1e-10).unwrap();
        assert!(f.is_empty());
    }
}
