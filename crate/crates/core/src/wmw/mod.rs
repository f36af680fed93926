//! Spatial-rank Wilcoxon-Mann-Whitney test.
//!
//! The statistic is the average spatial sign over all cross-sample pairs,
//! `T = (mn)^-1 sum_i sum_j SGN(Y_j - X_i)`, an element of the dual space. Its
//! Hoeffding projections `U_i = n^-1 sum_j SGN(Y_j - X_i)` and
//! `V_j = m^-1 sum_i SGN(Y_j - X_i)` estimate the covariances `Gamma_1` and
//! `Gamma_2` of the Gaussian limit of `(mn/N)^(1/2) T`, and the test rejects
//! when the dual norm of the scaled statistic exceeds the Monte Carlo
//! `(1 - alpha)`-quantile of the norm of that Gaussian limit.

pub mod calibration;
pub mod spectral;

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fspace::{dual_norm_slice, same_grid, sgn_into, DualVector, Grid, LpGeometry, Sample};

pub use calibration::{weighted_chisq_norm_quantile, MIN_DRAWS};
pub use spectral::{spectral_decompose, spectral_from_factor, SpectralModel, DEFAULT_TRUNC_TOL};

/// Default number of calibration draws.
pub const DEFAULT_MC_DRAWS: usize = 100_000;

/// Which plug-in estimate of the null covariance calibrates the test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaEstimator {
    /// Within-group covariance, divisor `N - 2`, of the combined-sample
    /// projections `W_k = (N-1)^-1 sum_(l != k) SGN(Z_l - Z_k)`. Each `W_k`
    /// averages over all other curves, which is valid under the null where
    /// `Gamma1 = Gamma2`; centering per group removes the shift.
    #[default]
    PooledSample,
    /// `(1 - m/N) Gamma1_hat + (m/N) Gamma2_hat`.
    Pooled,
    /// `Gamma1_hat` from the X-side projections only.
    XOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WmwConfig {
    pub alpha: f64,
    pub n_mc: usize,
    pub seed: u64,
    pub trunc_tol: f64,
    pub gamma: GammaEstimator,
}

impl Default for WmwConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            n_mc: DEFAULT_MC_DRAWS,
            seed: 0,
            trunc_tol: DEFAULT_TRUNC_TOL,
            gamma: GammaEstimator::PooledSample,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WmwTestResult {
    /// `||(mn/N)^(1/2) T_WMW||` in the dual norm.
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub m: usize,
    pub n: usize,
    /// `m / N`.
    pub gamma_hat: f64,
    pub gamma_estimator: GammaEstimator,
    pub spectral: SpectralModel,
    pub mc_draws: usize,
    pub seed: u64,
}

/// Cross-sample sign averages: the statistic and both projection families.
#[derive(Debug, Clone)]
pub struct Projections {
    pub statistic: DualVector,
    pub x_side: Vec<DualVector>,
    pub y_side: Vec<DualVector>,
}

fn check_pair(x: &Sample, y: &Sample) -> Result<Arc<Grid>> {
    if !same_grid(x.grid(), y.grid()) {
        return Err(Error::GridMismatch);
    }
    Ok(x.grid().clone())
}

/// Computes every `SGN(Y_j - X_i)` once and accumulates `U_i`, `V_j` and `T`.
pub fn projections(x: &Sample, y: &Sample, geom: &LpGeometry) -> Result<Projections> {
    let grid = check_pair(x, y)?;
    let (m, n, d) = (x.size(), y.size(), grid.len());
    let w = grid.weights();
    let p = geom.p();

    // Row i holds the n sign vectors of (Y_j - X_i), j = 0..n, back to back.
    let rows: Vec<Vec<f64>> = x
        .curves()
        .par_iter()
        .map(|xi| {
            let mut signs = vec![0.0; n * d];
            let mut diff = vec![0.0; d];
            for (j, yj) in y.curves().iter().enumerate() {
                for ((df, a), b) in diff.iter_mut().zip(yj.values()).zip(xi.values()) {
                    *df = a - b;
                }
                sgn_into(&diff, w, p, &mut signs[j * d..(j + 1) * d]);
            }
            signs
        })
        .collect();

    let x_side: Vec<DualVector> = rows
        .iter()
        .map(|signs| {
            let mut u = vec![0.0; d];
            for chunk in signs.chunks_exact(d) {
                u.iter_mut().zip(chunk).for_each(|(a, s)| *a += s);
            }
            u.iter_mut().for_each(|a| *a /= n as f64);
            DualVector::from_raw(grid.clone(), u)
        })
        .collect();

    let y_side: Vec<DualVector> = (0..n)
        .map(|j| {
            let mut v = vec![0.0; d];
            for signs in &rows {
                v.iter_mut()
                    .zip(&signs[j * d..(j + 1) * d])
                    .for_each(|(a, s)| *a += s);
            }
            v.iter_mut().for_each(|a| *a /= m as f64);
            DualVector::from_raw(grid.clone(), v)
        })
        .collect();

    let mut t = vec![0.0; d];
    for u in &x_side {
        t.iter_mut().zip(u.coeffs()).for_each(|(a, s)| *a += s);
    }
    t.iter_mut().for_each(|a| *a /= m as f64);

    Ok(Projections {
        statistic: DualVector::from_raw(grid, t),
        x_side,
        y_side,
    })
}

/// `T_WMW = (mn)^-1 sum_i sum_j SGN(Y_j - X_i)`.
pub fn t_wmw(x: &Sample, y: &Sample, geom: &LpGeometry) -> Result<DualVector> {
    Ok(projections(x, y, geom)?.statistic)
}

/// The X-side projections `U_i` and Y-side projections `V_j`.
pub fn hoeffding_projections(
    x: &Sample,
    y: &Sample,
    geom: &LpGeometry,
) -> Result<(Vec<DualVector>, Vec<DualVector>)> {
    let p = projections(x, y, geom)?;
    Ok((p.x_side, p.y_side))
}

/// Plug-in covariance `m^-1 sum_i (U_i - c)(U_i - c)'` of projection
/// coefficient vectors about `center`.
pub fn gamma1_hat(projections: &[DualVector], center: &DualVector) -> Result<DMatrix<f64>> {
    if projections.len() < 2 {
        return Err(Error::InsufficientData {
            what: "a projection covariance",
            needed: 2,
            got: projections.len(),
        });
    }
    if projections.iter().any(|u| !same_grid(u.grid(), center.grid())) {
        return Err(Error::GridMismatch);
    }
    let a = centered_factor(projections, center, 1.0 / projections.len() as f64);
    let mut m = &a * a.transpose();
    m.fill_lower_triangle_with_upper_triangle();
    Ok(m)
}

/// Columns `sqrt(scale) (U_i - center)`.
fn centered_factor(projections: &[DualVector], center: &DualVector, scale: f64) -> DMatrix<f64> {
    let d = center.coeffs().len();
    let s = scale.sqrt();
    DMatrix::from_fn(d, projections.len(), |i, k| {
        s * (projections[k].coeffs()[i] - center.coeffs()[i])
    })
}

/// `sum_(l != i) SGN(S_l - S_i)` for every curve `S_i` of one sample.
fn within_sign_sums(s: &Sample, geom: &LpGeometry) -> Vec<Vec<f64>> {
    let curves = s.curves();
    let d = s.dim();
    let w = s.grid().weights();
    let p = geom.p();
    // Row i holds SGN(S_l - S_i) for l > i.
    let rows: Vec<Vec<f64>> = (0..curves.len())
        .into_par_iter()
        .map(|i| {
            let later = curves.len() - i - 1;
            let mut signs = vec![0.0; later * d];
            let mut diff = vec![0.0; d];
            for (k, l) in (i + 1..curves.len()).enumerate() {
                for ((df, a), b) in diff.iter_mut().zip(curves[l].values()).zip(curves[i].values()) {
                    *df = a - b;
                }
                sgn_into(&diff, w, p, &mut signs[k * d..(k + 1) * d]);
            }
            signs
        })
        .collect();
    let mut sums = vec![vec![0.0; d]; curves.len()];
    for (i, row) in rows.iter().enumerate() {
        for (k, chunk) in row.chunks_exact(d).enumerate() {
            let l = i + 1 + k;
            for t in 0..d {
                sums[i][t] += chunk[t];
                sums[l][t] -= chunk[t];
            }
        }
    }
    sums
}

/// Projections `W_k = (N-1)^-1 sum_(l != k) SGN(Z_l - Z_k)` of the combined
/// sample, X curves first.
pub fn combined_projections(x: &Sample, y: &Sample, geom: &LpGeometry, proj: &Projections) -> Result<Vec<DualVector>> {
    let grid = check_pair(x, y)?;
    let (m, n) = (x.size() as f64, y.size() as f64);
    let scale = 1.0 / (m + n - 1.0);
    let wx = within_sign_sums(x, geom);
    let wy = within_sign_sums(y, geom);
    let from_x = wx.into_iter().zip(&proj.x_side).map(|(a, u)| {
        a.iter().zip(u.coeffs()).map(|(a, u)| scale * (a + n * u)).collect()
    });
    let from_y = wy.into_iter().zip(&proj.y_side).map(|(b, v)| {
        b.iter().zip(v.coeffs()).map(|(b, v)| scale * (b - m * v)).collect()
    });
    Ok(from_x
        .chain(from_y)
        .map(|c| DualVector::from_raw(grid.clone(), c))
        .collect())
}

fn mean_dual(v: &[DualVector]) -> DualVector {
    let mut mu = vec![0.0; v[0].coeffs().len()];
    for u in v {
        mu.iter_mut().zip(u.coeffs()).for_each(|(a, b)| *a += b);
    }
    mu.iter_mut().for_each(|a| *a /= v.len() as f64);
    DualVector::from_raw(v[0].grid().clone(), mu)
}

/// Spectrum of the configured plug-in null covariance.
pub fn null_covariance_spectrum(
    x: &Sample,
    y: &Sample,
    geom: &LpGeometry,
    proj: &Projections,
    estimator: GammaEstimator,
    trunc_tol: f64,
) -> Result<SpectralModel> {
    let m = proj.x_side.len();
    let n = proj.y_side.len();
    let gamma = m as f64 / (m + n) as f64;
    let t = &proj.statistic;
    let factor = match estimator {
        GammaEstimator::PooledSample => {
            let w = combined_projections(x, y, geom, proj)?;
            let (wx, wy) = w.split_at(m);
            let scale = 1.0 / (m + n - 2) as f64;
            let a = centered_factor(wx, &mean_dual(wx), scale);
            let b = centered_factor(wy, &mean_dual(wy), scale);
            let mut f = DMatrix::zeros(a.nrows(), m + n);
            f.columns_mut(0, m).copy_from(&a);
            f.columns_mut(m, n).copy_from(&b);
            f
        }
        GammaEstimator::XOnly => centered_factor(&proj.x_side, t, 1.0 / m as f64),
        GammaEstimator::Pooled => {
            let a = centered_factor(&proj.x_side, t, (1.0 - gamma) / m as f64);
            let b = centered_factor(&proj.y_side, t, gamma / n as f64);
            let mut f = DMatrix::zeros(a.nrows(), m + n);
            f.columns_mut(0, m).copy_from(&a);
            f.columns_mut(m, n).copy_from(&b);
            f
        }
    };
    spectral_from_factor(&factor, t.grid().weights(), trunc_tol)
}

/// Calibration draws of the dual norm of the Gaussian limit.
pub(crate) fn null_norm_draws(spectral: &SpectralModel, geom: &LpGeometry, n_mc: usize, seed: u64) -> Vec<f64> {
    if geom.is_hilbert() {
        calibration::weighted_chisq_norm_draws(&spectral.eigenvalues, n_mc, seed)
    } else {
        calibration::gaussian_dual_norm_draws(spectral, geom.q(), n_mc, seed)
    }
}

/// `||(mn/N)^(1/2) T_WMW||` without calibration.
pub fn scaled_statistic(proj: &Projections, geom: &LpGeometry) -> f64 {
    let m = proj.x_side.len() as f64;
    let n = proj.y_side.len() as f64;
    let t = &proj.statistic;
    (m * n / (m + n)).sqrt() * dual_norm_slice(t.coeffs(), t.grid().weights(), geom.q())
}

/// Runs the test at level `cfg.alpha`.
pub fn wmw_test(x: &Sample, y: &Sample, geom: &LpGeometry, cfg: &WmwConfig) -> Result<WmwTestResult> {
    calibration::check_alpha(cfg.alpha)?;
    calibration::check_draws(cfg.n_mc)?;
    let grid = check_pair(x, y)?;
    geom.check_grid(&grid)?;
    let (m, n) = (x.size(), y.size());
    if m < 2 || n < 2 {
        return Err(Error::InsufficientData {
            what: "the WMW test (per group)",
            needed: 2,
            got: m.min(n),
        });
    }
    let proj = projections(x, y, geom)?;
    let statistic = scaled_statistic(&proj, geom);
    let spectral = null_covariance_spectrum(x, y, geom, &proj, cfg.gamma, cfg.trunc_tol)?;

    let mut draws = null_norm_draws(&spectral, geom, cfg.n_mc, cfg.seed);
    let p_value = calibration::mc_p_value(&draws, statistic);
    let critical_value = calibration::quantile(&mut draws, 1.0 - cfg.alpha);

    Ok(WmwTestResult {
        statistic,
        critical_value,
        p_value,
        reject: statistic > critical_value,
        alpha: cfg.alpha,
        m,
        n,
        gamma_hat: m as f64 / (m + n) as f64,
        gamma_estimator: cfg.gamma,
        spectral,
        mc_draws: cfg.n_mc,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fspace::{sgn, Curve, WeightMode};
    use rand::Rng;

    fn grid(d: usize) -> Arc<Grid> {
        Arc::new(Grid::unit(d, WeightMode::Euclidean).unwrap())
    }

    fn sample(g: &Arc<Grid>, rows: &[&[f64]]) -> Sample {
        Sample::from_rows(g.clone(), rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn random_sample(g: &Arc<Grid>, n: usize, shift: f64, rng: &mut impl Rng) -> Sample {
        let rows = (0..n)
            .map(|_| (0..g.len()).map(|_| rng.random_range(-1.0..1.0) + shift).collect())
            .collect();
        Sample::from_rows(g.clone(), rows).unwrap()
    }

    #[test]
    fn single_pair_is_its_sign() {
        let g = grid(3);
        let x = sample(&g, &[&[1.0, 0.0, -2.0]]);
        let y = sample(&g, &[&[0.5, 3.0, 1.0]]);
        let geo = LpGeometry::new(3.0, WeightMode::Euclidean).unwrap();
        let t = t_wmw(&x, &y, &geo).unwrap();
        let direct = sgn(&y.curves()[0].sub(&x.curves()[0]).unwrap(), &geo);
        assert_eq!(t.coeffs(), direct.coeffs());
        let (u, _) = hoeffding_projections(&x, &y, &geo).unwrap();
        assert_eq!(u[0].coeffs(), t.coeffs());
    }

    #[test]
    fn univariate_enumeration() {
        let g = Arc::new(Grid::new(0.0, 0.0, 1, WeightMode::Euclidean).unwrap());
        let x = sample(&g, &[&[0.0], &[1.0]]);
        let y = sample(&g, &[&[2.0], &[3.0]]);
        let geo = LpGeometry::hilbert();
        let p = projections(&x, &y, &geo).unwrap();
        assert_eq!(p.statistic.coeffs(), &[1.0]);
        assert!(p.x_side.iter().all(|u| u.coeffs() == [1.0]));
        assert!(p.y_side.iter().all(|v| v.coeffs() == [1.0]));
    }

    #[test]
    fn identical_multisets_cancel() {
        let g = grid(6);
        let mut rng = crate::rng::stream(1, &[]);
        let x = random_sample(&g, 5, 0.0, &mut rng);
        let mut rev = x.curves().to_vec();
        rev.reverse();
        let y = Sample::new(g.clone(), rev).unwrap();
        let geo = LpGeometry::new(3.0, WeightMode::Euclidean).unwrap();
        let p = projections(&x, &y, &geo).unwrap();
        assert!(p.statistic.coeffs().iter().all(|c| c.abs() < 1e-15));
        let mean_u: f64 = p.x_side.iter().map(|u| u.coeffs()[2]).sum::<f64>() / 5.0;
        assert!(mean_u.abs() < 1e-15);

        let res = wmw_test(&x, &y, &geo, &WmwConfig { n_mc: 2000, ..Default::default() }).unwrap();
        assert!(res.statistic < 1e-14);
        assert!(!res.reject);
        assert!(res.p_value >= 1.0 - 1.0 / 2001.0);
    }

    #[test]
    fn projections_average_to_statistic() {
        let g = grid(8);
        let mut rng = crate::rng::stream(2, &[]);
        let x = random_sample(&g, 7, 0.0, &mut rng);
        let y = random_sample(&g, 4, 0.3, &mut rng);
        for p in [2.0, 3.0] {
            let geo = LpGeometry::new(p, WeightMode::Euclidean).unwrap();
            let pr = projections(&x, &y, &geo).unwrap();
            for i in 0..8 {
                let mu: f64 = pr.x_side.iter().map(|u| u.coeffs()[i]).sum::<f64>() / 7.0;
                let mv: f64 = pr.y_side.iter().map(|v| v.coeffs()[i]).sum::<f64>() / 4.0;
                assert!((mu - pr.statistic.coeffs()[i]).abs() < 1e-12);
                assert!((mv - pr.statistic.coeffs()[i]).abs() < 1e-12);
            }
            // brute-force mean over all pairs
            let mut brute = [0.0; 8];
            for xi in x.curves() {
                for yj in y.curves() {
                    let s = sgn(&yj.sub(xi).unwrap(), &geo);
                    brute.iter_mut().zip(s.coeffs()).for_each(|(a, b)| *a += b / 28.0);
                }
            }
            for (a, b) in brute.iter().zip(pr.statistic.coeffs()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gamma1_hat_examples() {
        let g = Arc::new(Grid::new(0.0, 0.0, 1, WeightMode::Euclidean).unwrap());
        let dv = |v: f64| DualVector::new(g.clone(), vec![v]).unwrap();
        let m = gamma1_hat(&[dv(0.0), dv(2.0)], &dv(1.0)).unwrap();
        assert!((m[(0, 0)] - 1.0).abs() < 1e-15);
        let same = gamma1_hat(&[dv(0.7), dv(0.7), dv(0.7)], &dv(0.7)).unwrap();
        assert_eq!(same[(0, 0)], 0.0);
        assert!(matches!(
            gamma1_hat(&[dv(1.0)], &dv(1.0)),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn gamma1_hat_matches_double_loop() {
        let g = grid(5);
        let mut rng = crate::rng::stream(3, &[]);
        let proj: Vec<DualVector> = (0..9)
            .map(|_| DualVector::new(g.clone(), (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let center = DualVector::new(g.clone(), (0..5).map(|_| rng.random_range(-0.2..0.2)).collect()).unwrap();
        let fast = gamma1_hat(&proj, &center).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let mut s = 0.0;
                for u in &proj {
                    s += (u.coeffs()[a] - center.coeffs()[a]) * (u.coeffs()[b] - center.coeffs()[b]);
                }
                assert!((fast[(a, b)] - s / 9.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pooled_spectrum_matches_dense_mixture() {
        let g = Arc::new(Grid::unit(10, WeightMode::Trapezoid).unwrap());
        let geo = LpGeometry::new(2.0, WeightMode::Trapezoid).unwrap();
        let mut rng = crate::rng::stream(4, &[]);
        let x = random_sample(&g, 6, 0.0, &mut rng);
        let y = random_sample(&g, 9, 0.2, &mut rng);
        let pr = projections(&x, &y, &geo).unwrap();
        let gamma = 6.0 / 15.0;
        let dense = gamma1_hat(&pr.x_side, &pr.statistic).unwrap() * (1.0 - gamma)
            + gamma1_hat(&pr.y_side, &pr.statistic).unwrap() * gamma;
        let a = spectral_decompose(&dense, g.weights(), 1e-10).unwrap();
        let b = null_covariance_spectrum(&x, &y, &geo, &pr, GammaEstimator::Pooled, 1e-10).unwrap();
        assert_eq!(a.retained, b.retained);
        for (l1, l2) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!((l1 - l2).abs() < 1e-12);
        }
        let xo = null_covariance_spectrum(&x, &y, &geo, &pr, GammaEstimator::XOnly, 1e-10).unwrap();
        assert!(xo.retained <= 5);
    }

    #[test]
    fn combined_projections_match_double_loop() {
        let g = grid(6);
        let mut rng = crate::rng::stream(9, &[]);
        let x = random_sample(&g, 5, 0.0, &mut rng);
        let y = random_sample(&g, 4, 0.7, &mut rng);
        for p in [2.0, 4.0] {
            let geo = LpGeometry::new(p, WeightMode::Euclidean).unwrap();
            let pr = projections(&x, &y, &geo).unwrap();
            let w = combined_projections(&x, &y, &geo, &pr).unwrap();
            let z: Vec<&Curve> = x.curves().iter().chain(y.curves()).collect();
            let mut total = [0.0; 6];
            for (k, wk) in w.iter().enumerate() {
                let mut brute = [0.0; 6];
                for (l, zl) in z.iter().enumerate() {
                    if l != k {
                        let s = sgn(&zl.sub(z[k]).unwrap(), &geo);
                        brute.iter_mut().zip(s.coeffs()).for_each(|(a, b)| *a += b / 8.0);
                    }
                }
                for (a, b) in brute.iter().zip(wk.coeffs()) {
                    assert!((a - b).abs() < 1e-12);
                }
                total.iter_mut().zip(wk.coeffs()).for_each(|(a, b)| *a += b);
            }
            assert!(total.iter().all(|t| t.abs() < 1e-12));
        }
    }

    #[test]
    fn pooled_sample_estimator_ignores_labels() {
        let g = grid(8);
        let mut rng = crate::rng::stream(10, &[]);
        let x = random_sample(&g, 6, 0.0, &mut rng);
        let y = random_sample(&g, 7, 0.3, &mut rng);
        let geo = LpGeometry::hilbert();
        let a = null_covariance_spectrum(&x, &y, &geo, &projections(&x, &y, &geo).unwrap(), GammaEstimator::PooledSample, 1e-10).unwrap();
        let b = null_covariance_spectrum(&y, &x, &geo, &projections(&y, &x, &geo).unwrap(), GammaEstimator::PooledSample, 1e-10).unwrap();
        assert_eq!(a.retained, b.retained);
        for (l1, l2) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!((l1 - l2).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_degenerate_samples() {
        let g = grid(4);
        let c = [1.0, 2.0, 3.0, 4.0];
        let x = sample(&g, &[&c, &c, &c]);
        let y = sample(&g, &[&c, &c]);
        let r = wmw_test(&x, &y, &LpGeometry::hilbert(), &WmwConfig { n_mc: 1000, ..Default::default() }).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.reject);
        assert!(r.spectral.is_empty());
    }

    #[test]
    fn errors() {
        let g = grid(3);
        let h = grid(4);
        let x = sample(&g, &[&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]]);
        let y = sample(&h, &[&[0.0, 1.0, 2.0, 3.0], &[1.0, 1.0, 1.0, 1.0]]);
        let cfg = WmwConfig { n_mc: 1000, ..Default::default() };
        assert!(matches!(t_wmw(&x, &y, &LpGeometry::hilbert()), Err(Error::GridMismatch)));
        let y1 = sample(&g, &[&[0.0, 1.0, 2.0]]);
        assert!(matches!(
            wmw_test(&x, &y1, &LpGeometry::hilbert(), &cfg),
            Err(Error::InsufficientData { .. })
        ));
        let trap = LpGeometry::new(2.0, WeightMode::Trapezoid).unwrap();
        assert!(wmw_test(&x, &x, &trap, &cfg).is_err());
    }

    #[test]
    fn swapping_samples_negates_statistic() {
        let g = grid(7);
        let mut rng = crate::rng::stream(6, &[]);
        let x = random_sample(&g, 6, 0.0, &mut rng);
        let y = random_sample(&g, 8, 0.4, &mut rng);
        let geo = LpGeometry::hilbert();
        let t1 = t_wmw(&x, &y, &geo).unwrap();
        let t2 = t_wmw(&y, &x, &geo).unwrap();
        for (a, b) in t1.coeffs().iter().zip(t2.coeffs()) {
            assert!((a + b).abs() < 1e-14);
        }
        let cfg = WmwConfig { n_mc: 5000, seed: 3, ..Default::default() };
        let r1 = wmw_test(&x, &y, &geo, &cfg).unwrap();
        let r2 = wmw_test(&y, &x, &geo, &cfg).unwrap();
        assert!((r1.statistic - r2.statistic).abs() < 1e-12);
        assert_eq!(r1.reject, r2.reject);
    }

    #[test]
    fn invariance_under_affine_isometries() {
        use rand::seq::SliceRandom;
        let d = 9;
        let g = grid(d);
        let mut rng = crate::rng::stream(7, &[]);
        let mut perm: Vec<usize> = (0..d).collect();
        perm.shuffle(&mut rng);
        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        for p in [2.0, 3.0] {
            let geo = LpGeometry::new(p, WeightMode::Euclidean).unwrap();
            let x = random_sample(&g, 8, 0.0, &mut rng);
            let y = random_sample(&g, 7, 0.5, &mut rng);
            for c in [-2.5, 0.3] {
                let tf = |s: &Sample| {
                    s.map(|cv| {
                        let v = cv.values();
                        Curve::new(g.clone(), (0..d).map(|k| c * v[perm[k]] + shift[k]).collect()).unwrap()
                    })
                    .unwrap()
                };
                let cfg = WmwConfig { n_mc: 4000, seed: 11, ..Default::default() };
                let a = wmw_test(&x, &y, &geo, &cfg).unwrap();
                let b = wmw_test(&tf(&x), &tf(&y), &geo, &cfg).unwrap();
                assert!((a.statistic - b.statistic).abs() < 1e-10);
                assert!((a.critical_value - b.critical_value).abs() < 1e-10);
                assert!((a.p_value - b.p_value).abs() < 1e-10);
                assert_eq!(a.reject, b.reject);
            }
        }
    }

    #[test]
    fn clear_shift_is_rejected() {
        let g = grid(20);
        let mut rng = crate::rng::stream(8, &[]);
        let x = random_sample(&g, 15, 0.0, &mut rng);
        let y = random_sample(&g, 15, 0.8, &mut rng);
        let r = wmw_test(&x, &y, &LpGeometry::hilbert(), &WmwConfig { n_mc: 10_000, ..Default::default() }).unwrap();
        assert!(r.reject);
        assert!(r.p_value < 0.01);
        assert!(r.spectral.retained <= 28);
    }
}
