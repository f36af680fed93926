//! Karhunen-Loeve process simulation on `[0,1]`.
//!
//! Curves are `X(t) = sum_{k<=K} Z_k phi_k(t)` with the sine basis
//! `phi_k(t) = sqrt(2) sin((k - 1/2) pi t)` and scales
//! `sigma_k = ((k - 1/2) pi)^-1`. Gaussian coefficients give standard Brownian
//! motion; dividing all coefficients of a curve by one `sqrt(V/r)`,
//! `V ~ chi^2_r`, gives the t process with `r` degrees of freedom.
//!
//! Curve `i` is drawn from the stream `(seed, i)`: first `V` (t processes
//! only), then the `K` normals in order.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fspace::{Curve, Grid, Sample};
use crate::rng;

pub const DEFAULT_KL_TERMS: usize = 500;

const CHUNK: usize = 64;

/// Distribution of the standardized coefficients `Z_k / sigma_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Innovation {
    Gaussian,
    /// `U_k (V/r)^-1/2` with one `V ~ chi^2_r` per curve.
    StudentT { dof: f64 },
    /// `U_k (V_k/r)^-1/2` with an independent `V_k` per coefficient. Not a t
    /// process; kept for sensitivity comparisons.
    StudentTIndependent { dof: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlSpec {
    pub terms: usize,
    pub innovation: Innovation,
}

impl KlSpec {
    pub fn sbm() -> Self {
        Self {
            terms: DEFAULT_KL_TERMS,
            innovation: Innovation::Gaussian,
        }
    }

    pub fn t_process(dof: f64) -> Self {
        Self {
            terms: DEFAULT_KL_TERMS,
            innovation: Innovation::StudentT { dof },
        }
    }

    pub fn with_terms(mut self, terms: usize) -> Self {
        self.terms = terms;
        self
    }

    /// `sigma_k` for `k = 1, 2, ...`.
    pub fn sigma(k: usize) -> f64 {
        1.0 / ((k as f64 - 0.5) * PI)
    }

    /// `phi_k(t)` for `k = 1, 2, ...`.
    pub fn basis(k: usize, t: f64) -> f64 {
        SQRT_2 * ((k as f64 - 0.5) * PI * t).sin()
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms == 0 {
            return Err(invalid("terms", "need at least one Karhunen-Loeve term"));
        }
        match self.innovation {
            Innovation::Gaussian => Ok(()),
            Innovation::StudentT { dof } | Innovation::StudentTIndependent { dof } => {
                if dof > 0.0 && dof.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("dof", format!("degrees of freedom must be positive, got {dof}")))
                }
            }
        }
    }

    /// `Var(Z_k) / sigma_k^2`, infinite when the innovations have no variance.
    pub fn variance_factor(&self) -> f64 {
        match self.innovation {
            Innovation::Gaussian => 1.0,
            Innovation::StudentT { dof } | Innovation::StudentTIndependent { dof } => {
                if dof > 2.0 {
                    dof / (dof - 2.0)
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// Reusable generator holding the basis evaluated on a grid.
#[derive(Debug, Clone)]
pub struct KlGenerator {
    spec: KlSpec,
    grid: Arc<Grid>,
    /// `K x d`, row `k` is `sigma_(k+1) phi_(k+1)` on the grid.
    scaled_basis: DMatrix<f64>,
}

impl KlGenerator {
    pub fn new(spec: KlSpec, grid: Arc<Grid>) -> Result<Self> {
        spec.validate()?;
        if grid.a() < 0.0 || grid.b() > 1.0 {
            return Err(Error::InvalidGrid(format!(
                "Karhunen-Loeve models live on [0,1], grid spans [{}, {}]",
                grid.a(),
                grid.b()
            )));
        }
        let t = grid.points();
        let scaled_basis = DMatrix::from_fn(spec.terms, t.len(), |k, i| {
            KlSpec::sigma(k + 1) * KlSpec::basis(k + 1, t[i])
        });
        Ok(Self {
            spec,
            grid,
            scaled_basis,
        })
    }

    pub fn spec(&self) -> &KlSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Standardized coefficients `Z_k / sigma_k` of curve `index`.
    fn coefficients(&self, seed: u64, index: u64, out: &mut [f64]) {
        let mut rng = rng::stream(seed, &[index]);
        match self.spec.innovation {
            Innovation::Gaussian => {
                for z in out.iter_mut() {
                    *z = StandardNormal.sample(&mut rng);
                }
            }
            Innovation::StudentT { dof } => {
                let chi = ChiSquared::new(dof).expect("validated dof");
                let v: f64 = chi.sample(&mut rng);
                let scale = (v / dof).sqrt().recip();
                for z in out.iter_mut() {
                    let u: f64 = StandardNormal.sample(&mut rng);
                    *z = u * scale;
                }
            }
            Innovation::StudentTIndependent { dof } => {
                let chi = ChiSquared::new(dof).expect("validated dof");
                for z in out.iter_mut() {
                    let u: f64 = StandardNormal.sample(&mut rng);
                    let v: f64 = chi.sample(&mut rng);
                    *z = u / (v / dof).sqrt();
                }
            }
        }
    }

    /// Value rows of curves `start .. start + count` under `seed`.
    pub fn rows(&self, seed: u64, start: usize, count: usize) -> Vec<Vec<f64>> {
        let k = self.spec.terms;
        let chunks: Vec<(usize, usize)> = (0..count.div_ceil(CHUNK))
            .map(|c| (start + c * CHUNK, CHUNK.min(count - c * CHUNK)))
            .collect();
        chunks
            .into_par_iter()
            .flat_map_iter(|(first, len)| {
                let mut coef = DMatrix::zeros(len, k);
                let mut buf = vec![0.0; k];
                for r in 0..len {
                    self.coefficients(seed, (first + r) as u64, &mut buf);
                    for (j, &z) in buf.iter().enumerate() {
                        coef[(r, j)] = z;
                    }
                }
                let values = coef * &self.scaled_basis;
                (0..len)
                    .map(|r| values.row(r).iter().copied().collect::<Vec<f64>>())
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Sample> {
        if n == 0 {
            return Err(Error::InsufficientData {
                what: "a simulated sample",
                needed: 1,
                got: 0,
            });
        }
        let curves = self
            .rows(seed, 0, n)
            .into_iter()
            .map(|v| Curve::from_raw(self.grid.clone(), v))
            .collect();
        Sample::new(self.grid.clone(), curves)
    }

    /// Covariance matrix of the truncated process on the grid.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let factor = self.spec.variance_factor();
        if !factor.is_finite() {
            return Err(invalid(
                "innovation",
                "the process has no finite covariance for dof <= 2",
            ));
        }
        let mut c = self.scaled_basis.transpose() * &self.scaled_basis * factor;
        c.fill_lower_triangle_with_upper_triangle();
        Ok(c)
    }
}

/// Draws `n` curves of the Karhunen-Loeve model on `grid`.
pub fn gen_sample(spec: &KlSpec, n: usize, grid: &Arc<Grid>, seed: u64) -> Result<Sample> {
    KlGenerator::new(*spec, grid.clone())?.sample(n, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    /// `c`
    Delta1,
    /// `c t`
    Delta2,
    /// `c t (1 - t)`
    Delta3,
    /// `c` times user-supplied grid values.
    Custom,
}

impl std::fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShiftKind::Delta1 => "delta1",
            ShiftKind::Delta2 => "delta2",
            ShiftKind::Delta3 => "delta3",
            ShiftKind::Custom => "custom",
        })
    }
}

/// Location shift `c * delta(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_values: Option<Vec<f64>>,
}

impl ShiftSpec {
    pub fn new(kind: ShiftKind, c: f64) -> Self {
        Self {
            kind,
            c,
            custom_values: None,
        }
    }

    pub fn custom(values: Vec<f64>, c: f64) -> Self {
        Self {
            kind: ShiftKind::Custom,
            c,
            custom_values: Some(values),
        }
    }

    pub fn with_amplitude(&self, c: f64) -> Self {
        Self { c, ..self.clone() }
    }

    /// Shift evaluated on `grid`.
    pub fn curve(&self, grid: &Arc<Grid>) -> Result<Curve> {
        let c = self.c;
        match self.kind {
            ShiftKind::Delta1 => Curve::from_fn(grid.clone(), |_| c),
            ShiftKind::Delta2 => Curve::from_fn(grid.clone(), |t| c * t),
            ShiftKind::Delta3 => Curve::from_fn(grid.clone(), |t| c * t * (1.0 - t)),
            ShiftKind::Custom => {
                let v = self
                    .custom_values
                    .as_ref()
                    .ok_or_else(|| invalid("custom_values", "custom shift needs values"))?;
                Curve::new(grid.clone(), v.iter().map(|x| c * x).collect())
            }
        }
    }
}

/// Adds the shift to every curve.
pub fn apply_shift(sample: &Sample, shift: &ShiftSpec) -> Result<Sample> {
    let delta = shift.curve(sample.grid())?;
    sample.map(|c| c.add(&delta).expect("shared grid"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fspace::WeightMode;

    fn unit(d: usize) -> Arc<Grid> {
        Arc::new(Grid::unit(d, WeightMode::Euclidean).unwrap())
    }

    fn empirical_cov(s: &Sample) -> DMatrix<f64> {
        let d = s.dim();
        let n = s.size() as f64;
        let mean = s.mean();
        let mut c = DMatrix::zeros(d, d);
        for cv in s.curves() {
            let v = nalgebra::DVector::from_iterator(d, cv.values().iter().zip(mean.values()).map(|(a, b)| a - b));
            c.ger(1.0 / (n - 1.0), &v, &v, 1.0);
        }
        c
    }

    #[test]
    fn basis_is_orthonormal_by_quadrature() {
        let g = Grid::unit(250, WeightMode::Trapezoid).unwrap();
        for j in 1..=6 {
            for k in 1..=6 {
                let ip: f64 = g
                    .points()
                    .iter()
                    .zip(g.weights())
                    .map(|(&t, w)| w * KlSpec::basis(j, t) * KlSpec::basis(k, t))
                    .sum();
                let target = if j == k { 1.0 } else { 0.0 };
                assert!((ip - target).abs() < 1e-3, "({j},{k}) -> {ip}");
            }
        }
    }

    #[test]
    fn brownian_covariance() {
        let g = unit(50);
        let s = gen_sample(&KlSpec::sbm(), 10_000, &g, 1).unwrap();
        let c = empirical_cov(&s);
        let t = g.points();
        let err = (0..50)
            .flat_map(|i| (0..50).map(move |j| (i, j)))
            .map(|(i, j)| (c[(i, j)] - t[i].min(t[j])).abs())
            .fold(0.0, f64::max);
        assert!(err <= 0.05, "max error {err}");
    }

    #[test]
    fn t5_covariance_is_scaled_brownian() {
        let g = unit(50);
        // Var of a t5 sample covariance entry at t=s=1 is ~22/n, so use 4e4 curves.
        let s = gen_sample(&KlSpec::t_process(5.0), 40_000, &g, 2).unwrap();
        let c = empirical_cov(&s);
        let t = g.points();
        let err = (0..50)
            .flat_map(|i| (0..50).map(move |j| (i, j)))
            .map(|(i, j)| (c[(i, j)] - 5.0 / 3.0 * t[i].min(t[j])).abs())
            .fold(0.0, f64::max);
        assert!(err <= 0.1, "max error {err}");
    }

    #[test]
    fn curves_start_at_zero() {
        let g = unit(17);
        for spec in [KlSpec::sbm(), KlSpec::t_process(1.0), KlSpec::t_process(5.0)] {
            let s = gen_sample(&spec, 20, &g, 3).unwrap();
            assert!(s.curves().iter().all(|c| c.values()[0] == 0.0));
        }
    }

    #[test]
    fn reproducible() {
        let g = unit(30);
        let a = gen_sample(&KlSpec::t_process(5.0), 70, &g, 99).unwrap();
        let b = gen_sample(&KlSpec::t_process(5.0), 70, &g, 99).unwrap();
        for (x, y) in a.curves().iter().zip(b.curves()) {
            assert_eq!(x.values(), y.values());
        }
        let c = gen_sample(&KlSpec::t_process(5.0), 70, &g, 100).unwrap();
        assert_ne!(a.curves()[0].values(), c.curves()[0].values());
    }

    #[test]
    fn truncation_deficit_at_one() {
        // Var X(1) = sum_k 2 sigma_k^2 sin^2((k - 1/2) pi) = sum_k 2 sigma_k^2.
        let var: f64 = (1..=DEFAULT_KL_TERMS).map(|k| 2.0 * KlSpec::sigma(k).powi(2)).sum();
        assert!(1.0 - var <= 1e-3 && var < 1.0);
        let g = unit(11);
        let cov = KlGenerator::new(KlSpec::sbm(), g).unwrap().covariance().unwrap();
        assert!((cov[(10, 10)] - var).abs() < 1e-12);
    }

    #[test]
    fn cauchy_process_is_heavy_tailed() {
        let g = Arc::new(Grid::new(1.0, 1.0, 1, WeightMode::Euclidean).unwrap());
        let s = gen_sample(&KlSpec::t_process(1.0), 10_000, &g, 4).unwrap();
        let x: Vec<f64> = s.curves().iter().map(|c| c.values()[0]).collect();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        assert!(m4 / (m2 * m2) > 3.0);
    }

    #[test]
    fn rejects_bad_grid_and_sizes() {
        let g = Arc::new(Grid::new(0.0, 2.0, 5, WeightMode::Euclidean).unwrap());
        assert!(gen_sample(&KlSpec::sbm(), 3, &g, 1).is_err());
        assert!(gen_sample(&KlSpec::sbm(), 0, &unit(5), 1).is_err());
        assert!(gen_sample(&KlSpec::t_process(0.0), 3, &unit(5), 1).is_err());
    }

    #[test]
    fn shift_examples() {
        let g = unit(5);
        let s = gen_sample(&KlSpec::sbm(), 4, &g, 5).unwrap();
        let same = apply_shift(&s, &ShiftSpec::new(ShiftKind::Delta1, 0.0)).unwrap();
        for (a, b) in s.curves().iter().zip(same.curves()) {
            assert_eq!(a.values(), b.values());
        }
        let sh = apply_shift(&s, &ShiftSpec::new(ShiftKind::Delta2, 2.0)).unwrap();
        for (a, b) in s.curves().iter().zip(sh.curves()) {
            assert!((b.values()[2] - a.values()[2] - 1.0).abs() < 1e-15);
        }
        let d3 = ShiftSpec::new(ShiftKind::Delta3, 4.0).curve(&g).unwrap();
        assert!((d3.values()[2] - 1.0).abs() < 1e-15);
        assert_eq!(d3.values()[0], 0.0);

        let custom = ShiftSpec::custom(vec![1.0, 0.0, 0.0, 0.0, 2.0], 0.5);
        let cs = apply_shift(&s, &custom).unwrap();
        assert!((cs.curves()[0].values()[4] - s.curves()[0].values()[4] - 1.0).abs() < 1e-15);
        assert!(ShiftSpec::custom(vec![1.0], 1.0).curve(&g).is_err());
    }

    #[test]
    fn shift_commutes_with_mean() {
        let g = unit(12);
        let s = gen_sample(&KlSpec::t_process(5.0), 9, &g, 6).unwrap();
        let sh = ShiftSpec::new(ShiftKind::Delta3, 1.7);
        let a = apply_shift(&s, &sh).unwrap().mean();
        let b = s.mean().add(&sh.curve(&g).unwrap()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
