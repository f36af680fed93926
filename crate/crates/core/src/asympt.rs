//! Local asymptotic power under shrinking shifts `Delta_N = delta (mn/N)^(-1/2)`.
//!
//! Limits used:
//! * WMW: `(mn/N)^(1/2) T_WMW -> G(J0 delta, Gamma1)` in the dual space, where
//!   `J0` is the Hessian of `x -> E||Y - X + x||` at zero and `Gamma1` is the
//!   covariance of `E(SGN(Z - X) | X)` for an independent copy `Z` of `X`.
//! * CFF: `(n/N) T_CFF -> ||G(delta, Sigma)||^2`.
//! * HKR1: `sum_(k<=L) lambda_k chi2_1(beta_k^2 / lambda_k)`; HKR2 drops the
//!   `lambda_k` weights, giving a noncentral `chi2_L`. Here `beta_k` is the
//!   projection of `delta` on the `k`-th eigenvector of `Sigma`.
//!
//! Population objects (`J0`, `Gamma1`) are Monte Carlo averages over curves
//! from the Karhunen-Loeve model, discretized on the model grid.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::fspace::{dual_norm_slice, norm_slice, same_grid, sgn_into, Curve, DualVector, Grid, LpGeometry};
use crate::harness::TestId;
use crate::meantests::{select_l, MeanTest, DEFAULT_CUMVAR_THRESHOLD};
use crate::rng::{self, tag};
use crate::simproc::{KlGenerator, KlSpec, ShiftKind, ShiftSpec};
use crate::wmw::calibration::{self, check_alpha, check_draws};
use crate::wmw::spectral::{spectral_decompose, SpectralModel, DEFAULT_TRUNC_TOL};
use crate::wmw::DEFAULT_MC_DRAWS;

pub const DEFAULT_MC_OUTER: usize = 10_000;
pub const DEFAULT_MC_INNER: usize = 500;

/// Differences are generated and reduced in chunks of this many draws.
const DRAW_CHUNK: usize = 4096;
/// Partial sums cover fixed runs of draws so the reduction order is fixed.
const PARTIAL: usize = 256;
const DEGENERATE_NORM: f64 = 1e-12;
const MAX_REDRAWS: usize = 64;

/// Population model for the asymptotic computations.
#[derive(Debug, Clone)]
pub struct DistributionSpec {
    pub kl: KlSpec,
    pub grid: Arc<Grid>,
    pub mc_outer: usize,
    pub mc_inner: usize,
    pub seed: u64,
}

impl DistributionSpec {
    pub fn new(kl: KlSpec, grid: Arc<Grid>) -> Self {
        Self {
            kl,
            grid,
            mc_outer: DEFAULT_MC_OUTER,
            mc_inner: DEFAULT_MC_INNER,
            seed: 0,
        }
    }

    pub fn with_budget(mut self, mc_outer: usize, mc_inner: usize) -> Self {
        self.mc_outer = mc_outer;
        self.mc_inner = mc_inner;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.kl.validate()?;
        if self.mc_outer == 0 {
            return Err(invalid("mc_outer", "need at least one outer draw"));
        }
        if self.mc_inner < 2 {
            return Err(invalid("mc_inner", "need at least two inner draws"));
        }
        Ok(())
    }

    fn generator(&self) -> Result<KlGenerator> {
        self.validate()?;
        KlGenerator::new(self.kl, self.grid.clone())
    }

    /// Differences `D = Z - X` of independent draws with indices
    /// `start .. start + count`. A draw with `||D|| < 1e-12` is replaced by a
    /// fresh pair.
    pub fn difference_draws(&self, geom: &LpGeometry, start: usize, count: usize) -> Result<Vec<Vec<f64>>> {
        geom.check_grid(&self.grid)?;
        let gen = self.generator()?;
        let sx = rng::derive(self.seed, &[tag::DIFF_X]);
        let sz = rng::derive(self.seed, &[tag::DIFF_Z]);
        let w = self.grid.weights();
        let p = geom.p();
        let xs = gen.rows(sx, start, count);
        let zs = gen.rows(sz, start, count);
        let mut out: Vec<Vec<f64>> = xs.into_iter().zip(zs).map(|(x, z)| diff(&z, &x)).collect();
        for (i, d) in out.iter_mut().enumerate() {
            let mut attempt = 0;
            while norm_slice(d, w, p) < DEGENERATE_NORM {
                attempt += 1;
                if attempt > MAX_REDRAWS {
                    return Err(invalid(
                        "distribution",
                        "differences of independent draws are degenerate",
                    ));
                }
                // Redraws live far beyond any primary index.
                let idx = (start + i) + (attempt << 40);
                let x = gen.rows(sx, idx, 1).pop().expect("one row");
                let z = gen.rows(sz, idx, 1).pop().expect("one row");
                *d = diff(&z, &x);
            }
        }
        Ok(out)
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a - b).collect()
}

/// Which form of the `L_p` Hessian to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianForm {
    /// Derivative of the spatial sign, with `sign(D)|D|^(p-1)` in the rank-one
    /// term.
    #[default]
    SignCorrected,
    /// Rank-one term written with `|D|^(p-1)`, no sign factor.
    Verbatim,
}

/// Adds the Hessian of the norm at `d` applied to each `delta` into the
/// matching row of `out`.
fn hessian_accumulate(d: &[f64], deltas: &[&[f64]], w: &[f64], p: f64, form: HessianForm, out: &mut [Vec<f64>]) {
    let r = norm_slice(d, w, p);
    if r < DEGENERATE_NORM {
        return;
    }
    if p == 2.0 && form == HessianForm::SignCorrected {
        let r2 = r * r;
        for (delta, acc) in deltas.iter().zip(out.iter_mut()) {
            let proj: f64 = d.iter().zip(*delta).zip(w).map(|((a, b), w)| w * a * b).sum();
            for ((o, di), de) in acc.iter_mut().zip(d).zip(*delta) {
                *o += (de - di * proj / r2) / r;
            }
        }
        return;
    }
    let rp1 = r.powf(p - 1.0);
    let r2p1 = r.powf(2.0 * p - 1.0);
    let lead: Vec<f64> = d.iter().map(|x| x.abs().powf(p - 2.0)).collect();
    let tail: Vec<f64> = d
        .iter()
        .map(|&x| {
            let a = x.abs().powf(p - 1.0);
            match form {
                HessianForm::SignCorrected => a * x.signum() * (x != 0.0) as u8 as f64,
                HessianForm::Verbatim => a,
            }
        })
        .collect();
    for (delta, acc) in deltas.iter().zip(out.iter_mut()) {
        let inner: f64 = tail.iter().zip(*delta).zip(w).map(|((a, b), w)| w * a * b).sum();
        for i in 0..d.len() {
            acc[i] += (p - 1.0) * (lead[i] * delta[i] / rp1 - tail[i] * inner / r2p1);
        }
    }
}

/// Sums of Hessian contributions over `draws`, in a fixed reduction order.
fn hessian_sums(draws: &[Vec<f64>], deltas: &[&[f64]], w: &[f64], p: f64, form: HessianForm) -> Vec<Vec<f64>> {
    let dim = w.len();
    let partials: Vec<Vec<Vec<f64>>> = draws
        .par_chunks(PARTIAL)
        .map(|chunk| {
            let mut acc = vec![vec![0.0; dim]; deltas.len()];
            for d in chunk {
                hessian_accumulate(d, deltas, w, p, form, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![vec![0.0; dim]; deltas.len()];
    for part in partials {
        for (t, v) in total.iter_mut().zip(part) {
            t.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
    }
    total
}

fn check_delta(delta: &Curve, grid: &Arc<Grid>, geom: &LpGeometry) -> Result<()> {
    if !same_grid(delta.grid(), grid) {
        return Err(Error::GridMismatch);
    }
    geom.check_grid(grid)
}

/// Average Hessian applied to `delta` over explicitly supplied differences.
pub fn j0_from_draws(draws: &[Vec<f64>], delta: &Curve, geom: &LpGeometry, form: HessianForm) -> Result<DualVector> {
    geom.check_grid(delta.grid())?;
    if draws.is_empty() {
        return Err(Error::InsufficientData {
            what: "a Hessian average",
            needed: 1,
            got: 0,
        });
    }
    let d = delta.grid().len();
    if draws.iter().any(|v| v.len() != d) {
        return Err(Error::GridMismatch);
    }
    let sums = hessian_sums(draws, &[delta.values()], delta.grid().weights(), geom.p(), form);
    let n = draws.len() as f64;
    let coeffs = sums.into_iter().next().expect("one delta").into_iter().map(|v| v / n).collect();
    DualVector::new(delta.grid().clone(), coeffs)
}

/// `J0(delta)` for several directions from one set of `mc_outer` draws.
pub fn j0_apply_many(deltas: &[Curve], dist: &DistributionSpec, geom: &LpGeometry, form: HessianForm) -> Result<Vec<DualVector>> {
    for delta in deltas {
        check_delta(delta, &dist.grid, geom)?;
    }
    let w = dist.grid.weights();
    let views: Vec<&[f64]> = deltas.iter().map(|c| c.values()).collect();
    let mut total = vec![vec![0.0; w.len()]; deltas.len()];
    let mut start = 0;
    while start < dist.mc_outer {
        let count = DRAW_CHUNK.min(dist.mc_outer - start);
        let draws = dist.difference_draws(geom, start, count)?;
        for (t, s) in total.iter_mut().zip(hessian_sums(&draws, &views, w, geom.p(), form)) {
            t.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
        start += count;
    }
    let n = dist.mc_outer as f64;
    total
        .into_iter()
        .map(|v| DualVector::new(dist.grid.clone(), v.into_iter().map(|x| x / n).collect()))
        .collect()
}

/// `J0(delta)` by Monte Carlo over `dist.mc_outer` differences.
pub fn j0_apply(delta: &Curve, dist: &DistributionSpec, geom: &LpGeometry) -> Result<DualVector> {
    j0_apply_with(delta, dist, geom, HessianForm::default())
}

pub fn j0_apply_with(delta: &Curve, dist: &DistributionSpec, geom: &LpGeometry, form: HessianForm) -> Result<DualVector> {
    Ok(j0_apply_many(std::slice::from_ref(delta), dist, geom, form)?.remove(0))
}

/// Side whose Hoeffding projection defines the covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionSide {
    /// `E(SGN(Z - X) | X)`.
    X,
    /// `E(SGN(Y - Z) | Y)`.
    Y,
}

/// Population `Gamma1` under the null.
pub fn gamma1_population(dist: &DistributionSpec, geom: &LpGeometry) -> Result<DMatrix<f64>> {
    gamma_population(dist, geom, ProjectionSide::X)
}

/// Nested Monte Carlo covariance of the projection `W`.
///
/// The inner draws are split into two independent pools `A` and `B`, shared
/// by all outer draws. With `W_a`, `W_b` the pool averages, the
/// symmetrized mean of `W_a W_b'` has no inner-variance term on the diagonal.
/// The result is projected onto the PSD cone.
pub fn gamma_population(dist: &DistributionSpec, geom: &LpGeometry, side: ProjectionSide) -> Result<DMatrix<f64>> {
    geom.check_grid(&dist.grid)?;
    let gen = dist.generator()?;
    let side_tag = match side {
        ProjectionSide::X => 0,
        ProjectionSide::Y => 1,
    };
    let outer = gen.rows(rng::derive(dist.seed, &[tag::OUTER, side_tag]), 0, dist.mc_outer);
    let half = dist.mc_inner / 2;
    let pool_a = gen.rows(rng::derive(dist.seed, &[tag::INNER_A, side_tag]), 0, half);
    let pool_b = gen.rows(rng::derive(dist.seed, &[tag::INNER_B, side_tag]), 0, dist.mc_inner - half);
    let w = dist.grid.weights();
    let p = geom.p();
    let d = w.len();
    let orient = match side {
        ProjectionSide::X => 1.0,
        ProjectionSide::Y => -1.0,
    };

    let pool_mean = |o: &[f64], pool: &[Vec<f64>]| {
        let mut acc = vec![0.0; d];
        let mut dz = vec![0.0; d];
        let mut s = vec![0.0; d];
        for z in pool {
            for ((t, a), b) in dz.iter_mut().zip(z).zip(o) {
                *t = a - b;
            }
            sgn_into(&dz, w, p, &mut s);
            acc.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        }
        let scale = orient / pool.len() as f64;
        acc.iter_mut().for_each(|a| *a *= scale);
        acc
    };
    let projections: Vec<(Vec<f64>, Vec<f64>)> = outer
        .par_iter()
        .map(|o| (pool_mean(o, &pool_a), pool_mean(o, &pool_b)))
        .collect();

    let n = projections.len();
    let wa = DMatrix::from_fn(d, n, |i, k| projections[k].0[i]);
    let wb = DMatrix::from_fn(d, n, |i, k| projections[k].1[i]);
    let mu_a = wa.column_mean();
    let mu_b = wb.column_mean();
    let cross = &wa * wb.transpose() / n as f64 - &mu_a * mu_b.transpose();
    let sym = (&cross + cross.transpose()) * 0.5;
    Ok(spectral_decompose(&sym, w, DEFAULT_TRUNC_TOL)?.reconstruct())
}

/// Draws of `sum_k (beta_k + sqrt(lambda_k) z_k)^2 + offset` and the matching
/// null draws `sum_k lambda_k z_k^2` from the same normals.
fn shifted_chisq_power(eigenvalues: &[f64], beta: &[f64], offset: f64, alpha: f64, n_mc: usize, seed: u64) -> f64 {
    let roots: Vec<f64> = eigenvalues.iter().map(|l| l.sqrt()).collect();
    let mut null = gaussian_squares(&roots, &vec![0.0; beta.len()], 0.0, n_mc, seed);
    let alt = gaussian_squares(&roots, beta, offset, n_mc, seed);
    let crit = calibration::quantile(&mut null, 1.0 - alpha);
    exceedance(&alt, crit)
}

fn gaussian_squares(roots: &[f64], beta: &[f64], offset: f64, n_mc: usize, seed: u64) -> Vec<f64> {
    calibration::gaussian_draws(roots.len(), n_mc, seed, |z| {
        offset
            + roots
                .iter()
                .zip(beta)
                .zip(z)
                .map(|((r, b), z)| (b + r * z).powi(2))
                .sum::<f64>()
    })
}

fn exceedance(draws: &[f64], crit: f64) -> f64 {
    draws.iter().filter(|&&x| x > crit).count() as f64 / draws.len() as f64
}

/// Power of the norm test given the limit covariance spectrum and mean.
/// Mean mass outside the retained eigenspace enters as a fixed offset.
pub fn wmw_power_from_parts(
    spectral: &SpectralModel,
    mean: &DualVector,
    geom: &LpGeometry,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_draws(n_mc)?;
    if spectral.is_empty() {
        return Err(Error::ZeroSpectrum);
    }
    let w = mean.grid().weights();
    if geom.is_hilbert() {
        let beta = spectral.project(mean.coeffs());
        let total: f64 = mean.coeffs().iter().zip(w).map(|(c, w)| w * c * c).sum();
        let orth = (total - beta.iter().map(|b| b * b).sum::<f64>()).max(0.0);
        return Ok(shifted_chisq_power(&spectral.eigenvalues, &beta, orth, alpha, n_mc, seed));
    }
    let q = geom.q();
    let mut null = calibration::gaussian_dual_norm_draws(spectral, q, n_mc, seed);
    let crit = calibration::quantile(&mut null, 1.0 - alpha);
    let roots: Vec<f64> = spectral.eigenvalues.iter().map(|l| l.sqrt()).collect();
    let alt = calibration::gaussian_draws(spectral.retained, n_mc, seed, |z| {
        let mut g = mean.coeffs().to_vec();
        for (k, (zk, rk)) in z.iter().zip(&roots).enumerate() {
            let a = zk * rk;
            for (gi, psi) in g.iter_mut().zip(spectral.eigenvectors.column(k).iter()) {
                *gi += a * psi;
            }
        }
        dual_norm_slice(&g, w, q)
    });
    Ok(exceedance(&alt, crit))
}

/// `P(||G(J0 delta, Gamma1)|| > c_alpha)`.
pub fn asymptotic_power_wmw(
    delta: &Curve,
    dist: &DistributionSpec,
    geom: &LpGeometry,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    check_delta(delta, &dist.grid, geom)?;
    let gamma = gamma1_population(dist, geom)?;
    let spectral = spectral_decompose(&gamma, dist.grid.weights(), DEFAULT_TRUNC_TOL)?;
    let mean = j0_apply(delta, dist, geom)?;
    wmw_power_from_parts(&spectral, &mean, geom, alpha, n_mc, seed)
}

fn sigma_spectrum(delta: &Curve, sigma: &DMatrix<f64>) -> Result<SpectralModel> {
    if sigma.nrows() != delta.grid().len() {
        return Err(Error::GridMismatch);
    }
    let s = spectral_decompose(sigma, delta.grid().weights(), DEFAULT_TRUNC_TOL)?;
    if s.is_empty() {
        return Err(Error::ZeroSpectrum);
    }
    Ok(s)
}

/// `P(||G(delta, Sigma)||^2 > q_alpha)` with `Sigma` in grid coordinates.
pub fn asymptotic_power_cff(delta: &Curve, sigma: &DMatrix<f64>, alpha: f64, n_mc: usize, seed: u64) -> Result<f64> {
    check_alpha(alpha)?;
    check_draws(n_mc)?;
    let s = sigma_spectrum(delta, sigma)?;
    cff_power_from_spectrum(&s, delta, alpha, n_mc, seed)
}

fn cff_power_from_spectrum(s: &SpectralModel, delta: &Curve, alpha: f64, n_mc: usize, seed: u64) -> Result<f64> {
    let beta = s.project(delta.values());
    let w = delta.grid().weights();
    let total: f64 = delta.values().iter().zip(w).map(|(c, w)| w * c * c).sum();
    let orth = (total - beta.iter().map(|b| b * b).sum::<f64>()).max(0.0);
    Ok(shifted_chisq_power(&s.eigenvalues, &beta, orth, alpha, n_mc, seed))
}

/// Checks `lambda_1 > ... > lambda_L > lambda_(L+1) > 0`.
fn check_hkr_spectrum(eigenvalues: &[f64], l: usize) -> Result<()> {
    if l == 0 {
        return Err(invalid("L", "need at least one component"));
    }
    if l >= eigenvalues.len() {
        return Err(Error::RankExceeded {
            requested: l + 1,
            rank: eigenvalues.len(),
        });
    }
    for k in 0..l {
        if eigenvalues[k] - eigenvalues[k + 1] <= 1e-8 * eigenvalues[k] {
            return Err(Error::NonDistinctEigenvalues { index: k + 1 });
        }
    }
    Ok(())
}

/// Local power of HKR1 or HKR2 on the first `l` eigenvectors of `Sigma`.
pub fn asymptotic_power_hkr(
    delta: &Curve,
    sigma: &DMatrix<f64>,
    l: usize,
    alpha: f64,
    variant: MeanTest,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    check_alpha(alpha)?;
    let s = sigma_spectrum(delta, sigma)?;
    hkr_power_from_spectrum(&s, delta, l, alpha, variant, n_mc, seed)
}

fn hkr_power_from_spectrum(
    s: &SpectralModel,
    delta: &Curve,
    l: usize,
    alpha: f64,
    variant: MeanTest,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    check_hkr_spectrum(&s.eigenvalues, l)?;
    let beta = s.project(delta.values());
    match variant {
        MeanTest::Hkr1 => {
            check_draws(n_mc)?;
            Ok(shifted_chisq_power(&s.eigenvalues[..l], &beta[..l], 0.0, alpha, n_mc, seed))
        }
        MeanTest::Hkr2 => {
            let nc: f64 = beta[..l].iter().zip(&s.eigenvalues).map(|(b, lam)| b * b / lam).sum();
            let crit = ChiSquared::new(l as f64)
                .expect("positive degrees of freedom")
                .inverse_cdf(1.0 - alpha);
            Ok(noncentral_chisq_sf(crit, l as f64, nc))
        }
        MeanTest::Cff => Err(invalid("variant", "expected HKR1 or HKR2")),
    }
}

/// Survival function of the noncentral chi-square, as a Poisson(nc/2)
/// mixture of central chi-squares with `df + 2j` degrees of freedom.
pub fn noncentral_chisq_sf(x: f64, df: f64, nc: f64) -> f64 {
    assert!(df > 0.0 && nc >= 0.0, "need df > 0 and nc >= 0");
    if x <= 0.0 {
        return 1.0;
    }
    let central = |k: f64| ChiSquared::new(k).expect("positive dof").sf(x);
    if nc == 0.0 {
        return central(df);
    }
    let half = nc / 2.0;
    let mode = half.floor();
    let spread = 12.0 * half.sqrt() + 40.0;
    let lo = (mode - spread).max(0.0) as u64;
    let hi = (mode + spread) as u64;
    (lo..=hi)
        .map(|j| {
            let j = j as f64;
            let log_w = -half + j * half.ln() - ln_gamma(j + 1.0);
            log_w.exp() * central(df + 2.0 * j)
        })
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Asymptotic power as a function of the shift amplitude `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticPowerCurve {
    pub test: TestId,
    pub shift_kind: ShiftKind,
    pub c_values: Vec<f64>,
    pub powers: Vec<f64>,
    pub alpha: f64,
    /// Limit of `m/N`; recorded only, since none of the limits above depend
    /// on it.
    pub gamma: f64,
}

/// Settings shared by every curve of a study.
#[derive(Debug, Clone)]
pub struct AsymptoticStudy {
    pub dist: DistributionSpec,
    pub geom: LpGeometry,
    pub alpha: f64,
    pub n_mc: usize,
    pub seed: u64,
    pub gamma: f64,
    pub cumvar_threshold: f64,
    pub l_override: Option<usize>,
    pub hessian: HessianForm,
}

impl AsymptoticStudy {
    pub fn new(dist: DistributionSpec, geom: LpGeometry) -> Self {
        let seed = dist.seed;
        Self {
            dist,
            geom,
            alpha: 0.05,
            n_mc: DEFAULT_MC_DRAWS,
            seed,
            gamma: 0.5,
            cumvar_threshold: DEFAULT_CUMVAR_THRESHOLD,
            l_override: None,
            hessian: HessianForm::default(),
        }
    }

    /// Number of HKR components implied by the population covariance.
    pub fn hkr_components(&self, sigma: &SpectralModel) -> Result<usize> {
        match self.l_override {
            Some(l) => Ok(l),
            None => select_l(&sigma.eigenvalues, self.cumvar_threshold),
        }
    }

    /// One curve per (shift, test), shifts outermost. The amplitude stored in
    /// each `ShiftSpec` is ignored; `c_values` supplies it. Each curve reuses
    /// one calibration stream across `c`.
    pub fn run(&self, shifts: &[ShiftSpec], c_values: &[f64], tests: &[TestId]) -> Result<Vec<AsymptoticPowerCurve>> {
        check_alpha(self.alpha)?;
        check_draws(self.n_mc)?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma", "need 0 < gamma < 1"));
        }
        let grid = &self.dist.grid;
        let shapes: Vec<Curve> = shifts
            .iter()
            .map(|s| s.with_amplitude(1.0).curve(grid))
            .collect::<Result<_>>()?;

        let wants_wmw = tests.contains(&TestId::Wmw);
        let wants_mean = tests.iter().any(|t| *t != TestId::Wmw);
        let (gamma_spec, j0) = if wants_wmw {
            let g = gamma1_population(&self.dist, &self.geom)?;
            let spec = spectral_decompose(&g, grid.weights(), DEFAULT_TRUNC_TOL)?;
            (Some(spec), j0_apply_many(&shapes, &self.dist, &self.geom, self.hessian)?)
        } else {
            (None, Vec::new())
        };
        let sigma = if wants_mean {
            let cov = KlGenerator::new(self.dist.kl, grid.clone())?.covariance()?;
            Some(spectral_decompose(&cov, grid.weights(), DEFAULT_TRUNC_TOL)?)
        } else {
            None
        };
        let l = match &sigma {
            Some(s) if tests.iter().any(|t| matches!(t, TestId::Hkr1 | TestId::Hkr2)) => self.hkr_components(s)?,
            _ => 0,
        };

        let mut curves = Vec::new();
        for (si, (shift, shape)) in shifts.iter().zip(&shapes).enumerate() {
            for &test in tests {
                let seed = rng::derive(self.seed, &[test.tag(), si as u64]);
                let powers = c_values
                    .iter()
                    .map(|&c| {
                        let delta = shape.scaled(c);
                        match test {
                            TestId::Wmw => wmw_power_from_parts(
                                gamma_spec.as_ref().expect("computed"),
                                &j0[si].scaled(c),
                                &self.geom,
                                self.alpha,
                                self.n_mc,
                                seed,
                            ),
                            TestId::Cff => cff_power_from_spectrum(sigma.as_ref().expect("computed"), &delta, self.alpha, self.n_mc, seed),
                            TestId::Hkr1 | TestId::Hkr2 => hkr_power_from_spectrum(
                                sigma.as_ref().expect("computed"),
                                &delta,
                                l,
                                self.alpha,
                                test.mean_test().expect("mean test"),
                                self.n_mc,
                                seed,
                            ),
                        }
                    })
                    .collect::<Result<Vec<f64>>>()?;
                curves.push(AsymptoticPowerCurve {
                    test,
                    shift_kind: shift.kind,
                    c_values: c_values.to_vec(),
                    powers,
                    alpha: self.alpha,
                    gamma: self.gamma,
                });
            }
        }
        Ok(curves)
    }
}
