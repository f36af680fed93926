//! Mean-based competitors: the `L2` statistic `T_CFF = m ||Xbar - Ybar||^2` and
//! the projection statistics `T_HKR1`, `T_HKR2` on the leading eigenvectors of
//! the pooled covariance, calibrated by their Gaussian limits.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Error, Result};
use crate::fspace::{same_grid, Curve, Grid, Sample};
use crate::rng::{self, tag};
use crate::wmw::calibration::{self, check_alpha, check_draws};
use crate::wmw::spectral::{spectral_from_factor, SpectralModel, DEFAULT_TRUNC_TOL};
use crate::wmw::DEFAULT_MC_DRAWS;

pub const DEFAULT_CUMVAR_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanTest {
    Cff,
    Hkr1,
    Hkr2,
}

impl fmt::Display for MeanTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeanTest::Cff => "cff",
            MeanTest::Hkr1 => "hkr1",
            MeanTest::Hkr2 => "hkr2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanTestConfig {
    pub alpha: f64,
    pub n_mc: usize,
    pub seed: u64,
    pub cumvar_threshold: f64,
    /// Fixed number of projection directions, bypassing the cumulative
    /// variance rule.
    pub l_override: Option<usize>,
    pub trunc_tol: f64,
}

impl Default for MeanTestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            n_mc: DEFAULT_MC_DRAWS,
            seed: 0,
            cumvar_threshold: DEFAULT_CUMVAR_THRESHOLD,
            l_override: None,
            trunc_tol: DEFAULT_TRUNC_TOL,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanTestResult {
    pub which: MeanTest,
    /// Unscaled statistic.
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    /// Projection directions used; 0 for CFF.
    pub l: usize,
    pub alpha: f64,
}

/// Eigen-decomposition of the pooled covariance together with the number of
/// projection directions.
#[derive(Debug, Clone)]
pub struct PooledSpectrum {
    pub spectral: SpectralModel,
    pub l: usize,
    pub cumvar_threshold: f64,
}

impl PooledSpectrum {
    pub fn estimate(x: &Sample, y: &Sample, cumvar_threshold: f64, trunc_tol: f64) -> Result<Self> {
        let spectral = pooled_spectrum(x, y, trunc_tol)?;
        let l = select_l(&spectral.eigenvalues, cumvar_threshold)?;
        Ok(Self {
            spectral,
            l,
            cumvar_threshold,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.spectral.eigenvalues
    }
}

fn check_pair(x: &Sample, y: &Sample) -> Result<Arc<Grid>> {
    if !same_grid(x.grid(), y.grid()) {
        return Err(Error::GridMismatch);
    }
    Ok(x.grid().clone())
}

fn mean_difference(x: &Sample, y: &Sample) -> Result<Curve> {
    check_pair(x, y)?;
    x.mean().sub(&y.mean())
}

/// `m ||Xbar - Ybar||^2` in the grid-weighted `L2` norm.
pub fn t_cff(x: &Sample, y: &Sample) -> Result<f64> {
    let diff = mean_difference(x, y)?;
    let w = diff.grid().weights();
    let sq: f64 = diff.values().iter().zip(w).map(|(v, w)| w * v * v).sum();
    Ok(x.size() as f64 * sq)
}

/// Centered `d x N` data matrix `F`; the pooled covariance is `F F' / (N - 2)`.
fn pooled_deviations(x: &Sample, y: &Sample) -> Result<DMatrix<f64>> {
    let grid = check_pair(x, y)?;
    let total = x.size() + y.size();
    if total < 3 {
        return Err(Error::InsufficientData {
            what: "a pooled covariance",
            needed: 3,
            got: total,
        });
    }
    let mut f = DMatrix::zeros(grid.len(), total);
    let mut col = 0;
    for s in [x, y] {
        let mean = s.mean();
        for c in s.curves() {
            for (i, (v, mu)) in c.values().iter().zip(mean.values()).enumerate() {
                f[(i, col)] = v - mu;
            }
            col += 1;
        }
    }
    Ok(f)
}

/// Within-group pooled covariance with divisor `N - 2`.
pub fn pooled_covariance(x: &Sample, y: &Sample) -> Result<DMatrix<f64>> {
    let f = pooled_deviations(x, y)?;
    let mut c = &f * f.transpose() / (f.ncols() - 2) as f64;
    c.fill_lower_triangle_with_upper_triangle();
    Ok(c)
}

/// Weighted eigen-decomposition of the pooled covariance.
pub fn pooled_spectrum(x: &Sample, y: &Sample, trunc_tol: f64) -> Result<SpectralModel> {
    let f = pooled_deviations(x, y)?;
    let f = f.scale(1.0 / ((f.ncols() - 2) as f64).sqrt());
    spectral_from_factor(&f, x.grid().weights(), trunc_tol)
}

/// Smallest `L` whose leading eigenvalues explain at least `threshold` of the
/// total (positive) variance.
pub fn select_l(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid(
            "cumvar_threshold",
            format!("need 0 < threshold <= 1, got {threshold}"),
        ));
    }
    let positive: Vec<f64> = eigenvalues.iter().copied().filter(|&l| l > 0.0).collect();
    let total: f64 = positive.iter().sum();
    if positive.is_empty() || total <= 0.0 {
        return Err(Error::ZeroSpectrum);
    }
    let mut cum = 0.0;
    for (k, l) in positive.iter().enumerate() {
        cum += l;
        // relative slack absorbs rounding in the running sum
        if cum / total >= threshold - 1e-12 {
            return Ok(k + 1);
        }
    }
    Ok(positive.len())
}

/// Squared weighted projections `<Xbar - Ybar, psi_k>^2` for `k < l`.
fn squared_scores(diff: &Curve, spectral: &SpectralModel, l: usize) -> Result<Vec<f64>> {
    if l == 0 {
        return Err(invalid("L", "need at least one projection direction"));
    }
    if l > spectral.retained {
        return Err(Error::RankExceeded {
            requested: l,
            rank: spectral.retained,
        });
    }
    Ok(spectral.project(diff.values())[..l].iter().map(|s| s * s).collect())
}

fn hkr_from_scores(scores: &[f64], eigenvalues: &[f64]) -> (f64, f64) {
    let hkr1 = scores.iter().sum();
    let hkr2 = scores.iter().zip(eigenvalues).map(|(s, l)| s / l).sum();
    (hkr1, hkr2)
}

/// `(T_HKR1, T_HKR2)` on the first `l` eigenvectors of the pooled covariance.
pub fn t_hkr(x: &Sample, y: &Sample, l: usize) -> Result<(f64, f64)> {
    let diff = mean_difference(x, y)?;
    let spectral = pooled_spectrum(x, y, DEFAULT_TRUNC_TOL)?;
    let scores = squared_scores(&diff, &spectral, l)?;
    Ok(hkr_from_scores(&scores, &spectral.eigenvalues))
}

/// Runs all three mean tests on one pair of samples, sharing the pooled
/// spectrum. Calibration streams are derived from `cfg.seed` per test.
pub fn mean_tests(x: &Sample, y: &Sample, cfg: &MeanTestConfig) -> Result<[MeanTestResult; 3]> {
    check_alpha(cfg.alpha)?;
    check_draws(cfg.n_mc)?;
    let diff = mean_difference(x, y)?;
    let (m, n) = (x.size() as f64, y.size() as f64);
    let total = m + n;
    let spectral = pooled_spectrum(x, y, cfg.trunc_tol)?;

    let cff_stat = t_cff(x, y)?;
    let cff_scaled = n / total * cff_stat;
    let cff_draws = squared_draws(&spectral.eigenvalues, cfg.n_mc, rng::derive(cfg.seed, &[tag::CFF]));
    let cff_p = calibration::mc_p_value(&cff_draws, cff_scaled);
    let cff = MeanTestResult {
        which: MeanTest::Cff,
        statistic: cff_stat,
        p_value: cff_p,
        reject: cff_p <= cfg.alpha,
        l: 0,
        alpha: cfg.alpha,
    };

    let l = match cfg.l_override {
        Some(l) => l,
        None => select_l(&spectral.eigenvalues, cfg.cumvar_threshold)?,
    };
    let scores = squared_scores(&diff, &spectral, l)?;
    let (hkr1, hkr2) = hkr_from_scores(&scores, &spectral.eigenvalues);
    let scale = m * n / total;

    let hkr1_draws = squared_draws(&spectral.eigenvalues[..l], cfg.n_mc, rng::derive(cfg.seed, &[tag::HKR1]));
    let hkr1_p = calibration::mc_p_value(&hkr1_draws, scale * hkr1);
    let hkr2_p = ChiSquared::new(l as f64)
        .expect("positive degrees of freedom")
        .sf(scale * hkr2);

    Ok([
        cff,
        MeanTestResult {
            which: MeanTest::Hkr1,
            statistic: hkr1,
            p_value: hkr1_p,
            reject: hkr1_p <= cfg.alpha,
            l,
            alpha: cfg.alpha,
        },
        MeanTestResult {
            which: MeanTest::Hkr2,
            statistic: hkr2,
            p_value: hkr2_p,
            reject: hkr2_p <= cfg.alpha,
            l,
            alpha: cfg.alpha,
        },
    ])
}

/// Runs one mean test.
pub fn mean_test_pvalues(x: &Sample, y: &Sample, which: MeanTest, cfg: &MeanTestConfig) -> Result<MeanTestResult> {
    let [cff, hkr1, hkr2] = mean_tests(x, y, cfg)?;
    Ok(match which {
        MeanTest::Cff => cff,
        MeanTest::Hkr1 => hkr1,
        MeanTest::Hkr2 => hkr2,
    })
}

/// Draws of `sum_k lambda_k z_k^2`.
fn squared_draws(eigenvalues: &[f64], n_mc: usize, seed: u64) -> Vec<f64> {
    calibration::weighted_chisq_norm_draws(eigenvalues, n_mc, seed)
        .into_iter()
        .map(|r| r * r)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fspace::WeightMode;
    use nalgebra::DVector;
    use rand::Rng;

    fn g1() -> Arc<Grid> {
        Arc::new(Grid::new(0.0, 0.0, 1, WeightMode::Euclidean).unwrap())
    }

    fn s(g: &Arc<Grid>, rows: Vec<Vec<f64>>) -> Sample {
        Sample::from_rows(g.clone(), rows).unwrap()
    }

    fn random(g: &Arc<Grid>, n: usize, rng: &mut impl Rng) -> Sample {
        let rows = (0..n)
            .map(|_| (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        s(g, rows)
    }

    #[test]
    fn cff_examples() {
        let g = g1();
        let x = s(&g, vec![vec![0.0], vec![2.0]]);
        let y = s(&g, vec![vec![3.0], vec![5.0]]);
        assert_eq!(t_cff(&x, &y).unwrap(), 18.0);
        assert_eq!(t_cff(&x, &x).unwrap(), 0.0);
        let x2 = x.map(|c| c.scaled(2.0)).unwrap();
        let y2 = y.map(|c| c.scaled(2.0)).unwrap();
        assert_eq!(t_cff(&x2, &y2).unwrap(), 72.0);
    }

    #[test]
    fn pooled_covariance_examples() {
        let g = g1();
        let x = s(&g, vec![vec![0.0], vec![2.0]]);
        let y = s(&g, vec![vec![3.0], vec![5.0]]);
        assert_eq!(pooled_covariance(&x, &y).unwrap()[(0, 0)], 2.0);

        let g3 = Arc::new(Grid::unit(3, WeightMode::Euclidean).unwrap());
        let c = s(&g3, vec![vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]]);
        assert_eq!(pooled_covariance(&c, &c).unwrap().amax(), 0.0);

        let one = s(&g, vec![vec![1.0]]);
        assert!(matches!(
            pooled_covariance(&one, &one),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn pooled_covariance_matches_double_loop() {
        let g = Arc::new(Grid::unit(4, WeightMode::Euclidean).unwrap());
        let mut rng = crate::rng::stream(1, &[]);
        let x = random(&g, 6, &mut rng);
        let y = random(&g, 5, &mut rng);
        let fast = pooled_covariance(&x, &y).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let mut acc = 0.0;
                for smp in [&x, &y] {
                    let mu = smp.mean();
                    for c in smp.curves() {
                        acc += (c.values()[a] - mu.values()[a]) * (c.values()[b] - mu.values()[b]);
                    }
                }
                assert!((fast[(a, b)] - acc / 9.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn select_l_examples() {
        assert_eq!(select_l(&[9.0, 1.0], 0.85).unwrap(), 1);
        assert_eq!(select_l(&[1.0, 1.0, 1.0, 1.0], 1.0).unwrap(), 4);
        assert!(matches!(select_l(&[0.0, 0.0], 0.85), Err(Error::ZeroSpectrum)));
        assert!(select_l(&[1.0], 0.0).is_err());
    }

    #[test]
    fn select_l_brownian_population_spectrum() {
        // lambda_k = ((k - 1/2) pi)^-2 sums to 1/2.
        let lambdas: Vec<f64> = (1..=100_000).map(|k| ((k as f64 - 0.5) * std::f64::consts::PI).powi(-2)).collect();
        let total: f64 = lambdas.iter().sum();
        assert!((lambdas[0] / total - 0.811).abs() < 1e-3);
        assert!(((lambdas[0] + lambdas[1]) / total - 0.901).abs() < 1e-3);
        assert_eq!(select_l(&lambdas, 0.85).unwrap(), 2);
    }

    #[test]
    fn equal_means_give_zero_statistics() {
        let g = Arc::new(Grid::unit(3, WeightMode::Euclidean).unwrap());
        let x = s(&g, vec![vec![1.0, 0.0, 2.0], vec![-1.0, 0.0, -2.0], vec![0.5, 1.0, 0.0]]);
        let y = s(&g, vec![vec![0.5, 1.0, 0.0], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]);
        let (h1, h2) = t_hkr(&x, &y, 1).unwrap();
        assert!(h1.abs() < 1e-30 && h2.abs() < 1e-28);
        let cfg = MeanTestConfig { n_mc: 2000, ..Default::default() };
        for r in mean_tests(&x, &y, &cfg).unwrap() {
            assert!(r.p_value >= 1.0 - 1.0 / 2001.0 - 1e-12, "{r:?}");
            assert!(!r.reject);
        }
    }

    #[test]
    fn exact_finite_dimensional_reductions() {
        let mut rng = crate::rng::stream(2, &[]);
        for case in 0..200 {
            let d = 1 + case % 5;
            let mode = if case % 2 == 0 { WeightMode::Euclidean } else { WeightMode::Trapezoid };
            let g = if d == 1 {
                g1()
            } else {
                Arc::new(Grid::unit(d, mode).unwrap())
            };
            let m = rng.random_range(d + 2..=20);
            let n = rng.random_range(2..=20);
            let x = random(&g, m, &mut rng);
            let y = random(&g, n, &mut rng);
            let cff = t_cff(&x, &y).unwrap();
            let (h1, h2) = t_hkr(&x, &y, d).unwrap();
            assert!((h1 - cff / m as f64).abs() <= 1e-10 * cff, "case {case}");

            let diff = DVector::from_column_slice(x.mean().sub(&y.mean()).unwrap().values());
            let s_inv = pooled_covariance(&x, &y).unwrap().try_inverse().unwrap();
            let hotelling = (diff.transpose() * s_inv * &diff)[(0, 0)];
            assert!((h2 - hotelling).abs() <= 1e-8 * hotelling, "case {case}: {h2} vs {hotelling}");
        }
    }

    #[test]
    fn rank_exceeded() {
        let g = Arc::new(Grid::unit(10, WeightMode::Euclidean).unwrap());
        let mut rng = crate::rng::stream(3, &[]);
        let x = random(&g, 3, &mut rng);
        let y = random(&g, 3, &mut rng);
        assert!(matches!(t_hkr(&x, &y, 5), Err(Error::RankExceeded { rank: 4, .. })));
        assert!(t_hkr(&x, &y, 0).is_err());
    }

    #[test]
    fn shift_invariance() {
        let g = Arc::new(Grid::unit(12, WeightMode::Trapezoid).unwrap());
        let mut rng = crate::rng::stream(4, &[]);
        let x = random(&g, 9, &mut rng);
        let y = random(&g, 7, &mut rng);
        let a = Curve::new(g.clone(), (0..12).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let xs = x.map(|c| c.add(&a).unwrap()).unwrap();
        let ys = y.map(|c| c.add(&a).unwrap()).unwrap();
        assert!((t_cff(&x, &y).unwrap() - t_cff(&xs, &ys).unwrap()).abs() < 1e-10);
        let (a1, a2) = t_hkr(&x, &y, 3).unwrap();
        let (b1, b2) = t_hkr(&xs, &ys, 3).unwrap();
        assert!((a1 - b1).abs() < 1e-10 && (a2 - b2).abs() < 1e-10);
    }

    #[test]
    fn eigenvector_sign_flip_invariance() {
        let g = Arc::new(Grid::unit(6, WeightMode::Euclidean).unwrap());
        let mut rng = crate::rng::stream(5, &[]);
        let x = random(&g, 8, &mut rng);
        let y = random(&g, 8, &mut rng);
        let diff = x.mean().sub(&y.mean()).unwrap();
        let mut spec = pooled_spectrum(&x, &y, 1e-10).unwrap();
        let before = hkr_from_scores(&squared_scores(&diff, &spec, 4).unwrap(), &spec.eigenvalues);
        spec.eigenvectors.column_mut(1).neg_mut();
        spec.eigenvectors.column_mut(3).neg_mut();
        let after = hkr_from_scores(&squared_scores(&diff, &spec, 4).unwrap(), &spec.eigenvalues);
        assert!((before.0 - after.0).abs() < 1e-14 && (before.1 - after.1).abs() < 1e-12);
    }

    #[test]
    fn reject_iff_p_at_most_alpha() {
        let g = Arc::new(Grid::unit(8, WeightMode::Euclidean).unwrap());
        let mut rng = crate::rng::stream(6, &[]);
        let x = random(&g, 10, &mut rng);
        let y = random(&g, 10, &mut rng)
            .map(|c| c.add(&Curve::from_fn(g.clone(), |_| 0.9).unwrap()).unwrap())
            .unwrap();
        let cfg = MeanTestConfig { n_mc: 5000, ..Default::default() };
        for r in mean_tests(&x, &y, &cfg).unwrap() {
            assert_eq!(r.reject, r.p_value <= r.alpha);
            assert!(r.reject, "{r:?}");
        }
        let single = mean_test_pvalues(&x, &y, MeanTest::Hkr2, &cfg).unwrap();
        assert_eq!(single.which, MeanTest::Hkr2);
    }
}
