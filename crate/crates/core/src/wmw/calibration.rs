//! Monte Carlo calibration against Gaussian limits.
//!
//! Draws are generated in fixed blocks of [`BLOCK`] draws. Block `b` uses the
//! stream `(seed, CALIBRATION, b)` and consumes `dim` standard normals per
//! draw, so the draw sequence depends only on `(seed, dim, n_mc)` and never on
//! the number of worker threads.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::fspace::dual_norm_slice;
use crate::rng::{self, tag};
use crate::wmw::spectral::SpectralModel;

pub const BLOCK: usize = 4096;

/// Smallest accepted calibration budget.
pub const MIN_DRAWS: usize = 1000;

/// Evaluates `f` on `n_mc` independent standard normal vectors of length `dim`.
pub fn gaussian_draws<F>(dim: usize, n_mc: usize, seed: u64, f: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let blocks = n_mc.div_ceil(BLOCK);
    let per_block: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, &[tag::CALIBRATION, b as u64]);
            let count = BLOCK.min(n_mc - b * BLOCK);
            let mut z = vec![0.0; dim];
            (0..count)
                .map(|_| {
                    for v in z.iter_mut() {
                        *v = StandardNormal.sample(&mut rng);
                    }
                    f(&z)
                })
                .collect()
        })
        .collect();
    per_block.concat()
}

/// Draws of `sqrt(sum_k lambda_k z_k^2)`.
pub fn weighted_chisq_norm_draws(eigenvalues: &[f64], n_mc: usize, seed: u64) -> Vec<f64> {
    if eigenvalues.is_empty() {
        return vec![0.0; n_mc];
    }
    gaussian_draws(eigenvalues.len(), n_mc, seed, |z| {
        eigenvalues
            .iter()
            .zip(z)
            .map(|(l, z)| l * z * z)
            .sum::<f64>()
            .sqrt()
    })
}

/// Draws of the weighted `q`-norm of `sum_k sqrt(lambda_k) z_k psi_k`, the
/// dual norm of a centred Gaussian element with the model's covariance.
pub fn gaussian_dual_norm_draws(spectral: &SpectralModel, q: f64, n_mc: usize, seed: u64) -> Vec<f64> {
    if spectral.is_empty() {
        return vec![0.0; n_mc];
    }
    let d = spectral.dim();
    let roots: Vec<f64> = spectral.eigenvalues.iter().map(|l| l.sqrt()).collect();
    let weights = spectral.weights();
    gaussian_draws(spectral.retained, n_mc, seed, |z| {
        let mut g = vec![0.0; d];
        for (k, (zk, rk)) in z.iter().zip(&roots).enumerate() {
            let a = zk * rk;
            for (gi, psi) in g.iter_mut().zip(spectral.eigenvectors.column(k).iter()) {
                *gi += a * psi;
            }
        }
        dual_norm_slice(&g, weights, q)
    })
}

/// Type-7 (linear interpolation) empirical quantile. Reorders `draws`.
pub fn quantile(draws: &mut [f64], prob: f64) -> f64 {
    assert!(!draws.is_empty(), "quantile of an empty sample");
    let n = draws.len();
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let (_, &mut x_lo, upper) = draws.select_nth_unstable_by(lo, f64::total_cmp);
    let x_hi = if hi == lo {
        x_lo
    } else {
        upper.iter().copied().fold(f64::INFINITY, f64::min)
    };
    x_lo + (h - lo as f64) * (x_hi - x_lo)
}

/// Add-one Monte Carlo p-value `(#{draws >= stat} + 1) / (n_mc + 1)`.
pub fn mc_p_value(draws: &[f64], statistic: f64) -> f64 {
    let count = draws.iter().filter(|&&x| x >= statistic).count();
    (count + 1) as f64 / (draws.len() + 1) as f64
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("need 0 < alpha < 1, got {alpha}")));
    }
    Ok(())
}

pub(crate) fn check_draws(n_mc: usize) -> Result<()> {
    if n_mc < MIN_DRAWS {
        return Err(invalid(
            "n_mc",
            format!("need at least {MIN_DRAWS} calibration draws, got {n_mc}"),
        ));
    }
    Ok(())
}

/// Monte Carlo `(1 - alpha)`-quantile of `sqrt(sum_k lambda_k z_k^2)`; zero
/// for an empty spectrum.
pub fn weighted_chisq_norm_quantile(spectral: &SpectralModel, alpha: f64, n_mc: usize, seed: u64) -> Result<f64> {
    check_alpha(alpha)?;
    check_draws(n_mc)?;
    if spectral.is_empty() {
        return Ok(0.0);
    }
    let mut draws = weighted_chisq_norm_draws(&spectral.eigenvalues, n_mc, seed);
    Ok(quantile(&mut draws, 1.0 - alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wmw::spectral::spectral_decompose;
    use nalgebra::{DMatrix, DVector};

    fn diag(values: &[f64]) -> SpectralModel {
        let m = DMatrix::from_diagonal(&DVector::from_vec(values.to_vec()));
        spectral_decompose(&m, &vec![1.0; values.len()], 1e-10).unwrap()
    }

    #[test]
    fn chi_square_one_quantile() {
        // sqrt of the chi^2_1 95th percentile 3.841459 is 1.959964.
        let c = weighted_chisq_norm_quantile(&diag(&[1.0]), 0.05, 100_000, 1).unwrap();
        assert!((c - 1.959964).abs() < 0.03, "{c}");
    }

    #[test]
    fn chi_square_two_quantile() {
        // chi^2_2 95th percentile is -2 ln 0.05 = 5.991465.
        let c = weighted_chisq_norm_quantile(&diag(&[1.0, 1.0]), 0.05, 100_000, 2).unwrap();
        let exact = (-2.0 * 0.05f64.ln()).sqrt();
        assert!((exact - 2.4477).abs() < 1e-4);
        assert!((c - exact).abs() < 0.03, "{c}");
    }

    #[test]
    fn zero_spectrum_quantile_is_zero() {
        let c = weighted_chisq_norm_quantile(&diag(&[0.0, 0.0]), 0.05, 10_000, 3).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(weighted_chisq_norm_quantile(&diag(&[1.0]), 0.0, 10_000, 1).is_err());
        assert!(weighted_chisq_norm_quantile(&diag(&[1.0]), 1.0, 10_000, 1).is_err());
        assert!(weighted_chisq_norm_quantile(&diag(&[1.0]), 0.05, 999, 1).is_err());
    }

    #[test]
    fn draws_do_not_depend_on_thread_count() {
        let lambdas = [2.0, 0.5, 0.1];
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| weighted_chisq_norm_draws(&lambdas, 10_000, 42));
        let b = four.install(|| weighted_chisq_norm_draws(&lambdas, 10_000, 42));
        assert_eq!(a, b);
    }

    #[test]
    fn dual_norm_draws_match_chisq_draws_for_p2() {
        let s = diag(&[3.0, 1.0, 0.25]);
        let a = weighted_chisq_norm_draws(&s.eigenvalues, 5000, 8);
        let b = gaussian_dual_norm_draws(&s, 2.0, 5000, 8);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_interpolates() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&mut v, 0.5), 3.0);
        let mut v = vec![1.0, 2.0];
        assert_eq!(quantile(&mut v, 0.25), 1.25);
        let mut v = vec![1.0, 2.0, 3.0];
        assert_eq!(quantile(&mut v, 1.0), 3.0);
    }

    #[test]
    fn p_value_add_one() {
        let draws = vec![1.0, 2.0, 3.0];
        assert_eq!(mc_p_value(&draws, 0.0), 1.0);
        assert_eq!(mc_p_value(&draws, 2.5), 0.5);
        assert_eq!(mc_p_value(&draws, 10.0), 0.25);
    }
}
