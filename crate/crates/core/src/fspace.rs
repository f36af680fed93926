//! Discretized `L_p[a,b]` geometry.
//!
//! Curves are observed on a shared equispaced [`Grid`]. The grid carries the
//! quadrature weights `w_i`, so that the norm of a curve is
//! `(sum_i w_i |x_i|^p)^(1/p)` and a dual element with coefficients `f_i`
//! acts on a curve `h` as `sum_i w_i f_i h_i`. With [`WeightMode::Euclidean`]
//! every weight is one and the norm is the plain `l_p` norm of the observed
//! vector; [`WeightMode::Trapezoid`] uses the trapezoid rule on `[a,b]`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// How quadrature weights are assigned to grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// All weights equal one.
    #[default]
    Euclidean,
    /// Trapezoid rule weights on `[a,b]`.
    Trapezoid,
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightMode::Euclidean => f.write_str("euclidean"),
            WeightMode::Trapezoid => f.write_str("trapezoid"),
        }
    }
}

/// Equispaced grid `a = t_1 < ... < t_d = b` with quadrature weights.
#[derive(Debug, Clone)]
pub struct Grid {
    a: f64,
    b: f64,
    points: Vec<f64>,
    weights: Vec<f64>,
    mode: WeightMode,
}

impl Grid {
    pub fn new(a: f64, b: f64, d: usize, mode: WeightMode) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidGrid("grid needs at least one point".into()));
        }
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidGrid("endpoints must be finite".into()));
        }
        if d == 1 {
            if a != b {
                return Err(Error::InvalidGrid(
                    "a single-point grid must have a == b".into(),
                ));
            }
            if mode == WeightMode::Trapezoid {
                return Err(Error::InvalidGrid(
                    "trapezoid weights need at least two points".into(),
                ));
            }
            return Ok(Self {
                a,
                b,
                points: vec![a],
                weights: vec![1.0],
                mode,
            });
        }
        if b <= a {
            return Err(Error::InvalidGrid(format!("need a < b, got [{a}, {b}]")));
        }
        let h = (b - a) / (d - 1) as f64;
        let mut points: Vec<f64> = (0..d).map(|i| a + i as f64 * h).collect();
        points[d - 1] = b;
        let weights = match mode {
            WeightMode::Euclidean => vec![1.0; d],
            WeightMode::Trapezoid => {
                let mut w = vec![h; d];
                w[0] = h / 2.0;
                w[d - 1] = h / 2.0;
                w
            }
        };
        Ok(Self {
            a,
            b,
            points,
            weights,
            mode,
        })
    }

    /// Equispaced grid on `[0,1]`.
    pub fn unit(d: usize, mode: WeightMode) -> Result<Self> {
        Self::new(0.0, 1.0, d, mode)
    }

    /// Builds a grid from observed coordinates, which must be equispaced
    /// within `rel_tol` of the step (or exactly one point).
    pub fn from_points(points: &[f64], mode: WeightMode, rel_tol: f64) -> Result<Self> {
        let d = points.len();
        if d == 0 {
            return Err(Error::InvalidGrid("no grid coordinates".into()));
        }
        let grid = Self::new(points[0], points[d - 1], d, mode)?;
        if d > 1 {
            let h = (grid.b - grid.a) / (d - 1) as f64;
            for (i, (&obs, &exp)) in points.iter().zip(&grid.points).enumerate() {
                if (obs - exp).abs() > rel_tol * h {
                    return Err(Error::InvalidGrid(format!(
                        "coordinate {i} ({obs}) is not equispaced (expected {exp})"
                    )));
                }
            }
        }
        Ok(grid)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.a == other.a && self.b == other.b && self.len() == other.len() && self.mode == other.mode
    }
}

pub(crate) fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// A function observed on a grid.
#[derive(Debug, Clone)]
pub struct Curve {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(
                "values",
                format!("expected {} values, got {}", grid.len(), values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid("values", format!("non-finite value at index {i}")));
        }
        Ok(Self { grid, values })
    }

    /// Evaluates `f` at every grid point.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let d = grid.len();
        Self {
            grid,
            values: vec![0.0; d],
        }
    }

    pub(crate) fn from_raw(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, c: f64) -> Curve {
        Curve::from_raw(self.grid.clone(), self.values.iter().map(|v| c * v).collect())
    }

    pub fn add(&self, other: &Curve) -> Result<Curve> {
        self.zip_with(other, |x, y| x + y)
    }

    pub fn sub(&self, other: &Curve) -> Result<Curve> {
        self.zip_with(other, |x, y| x - y)
    }

    fn zip_with(&self, other: &Curve, f: impl Fn(f64, f64) -> f64) -> Result<Curve> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Curve::from_raw(self.grid.clone(), values))
    }
}

/// One group of curves sharing a grid.
#[derive(Debug, Clone)]
pub struct Sample {
    grid: Arc<Grid>,
    curves: Vec<Curve>,
}

impl Sample {
    pub fn new(grid: Arc<Grid>, curves: Vec<Curve>) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::InsufficientData {
                what: "a sample",
                needed: 1,
                got: 0,
            });
        }
        if curves.iter().any(|c| !same_grid(&grid, c.grid())) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, curves })
    }

    /// Builds a sample from rows of values on `grid`.
    pub fn from_rows(grid: Arc<Grid>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let curves = rows
            .into_iter()
            .map(|r| Curve::new(grid.clone(), r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, curves)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn size(&self) -> usize {
        self.curves.len()
    }

    pub fn dim(&self) -> usize {
        self.grid.len()
    }

    /// Pointwise mean curve.
    pub fn mean(&self) -> Curve {
        let d = self.dim();
        let mut acc = vec![0.0; d];
        for c in &self.curves {
            for (a, v) in acc.iter_mut().zip(c.values()) {
                *a += v;
            }
        }
        let n = self.size() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Curve::from_raw(self.grid.clone(), acc)
    }

    /// Applies `f` to every curve.
    pub fn map(&self, f: impl Fn(&Curve) -> Curve) -> Result<Sample> {
        Sample::new(self.grid.clone(), self.curves.iter().map(f).collect())
    }

    /// Sub-sample with the given curve indices.
    pub fn select(&self, indices: &[usize]) -> Result<Sample> {
        Sample::new(
            self.grid.clone(),
            indices.iter().map(|&i| self.curves[i].clone()).collect(),
        )
    }
}

/// Norm exponent and weight mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpGeometry {
    p: f64,
    q: f64,
    weight_mode: WeightMode,
}

impl LpGeometry {
    /// `p` must be finite and at least 2.
    pub fn new(p: f64, weight_mode: WeightMode) -> Result<Self> {
        if !p.is_finite() || p < 2.0 {
            return Err(invalid("p", format!("need 2 <= p < inf, got {p}")));
        }
        Ok(Self {
            p,
            q: p / (p - 1.0),
            weight_mode,
        })
    }

    pub fn hilbert() -> Self {
        Self {
            p: 2.0,
            q: 2.0,
            weight_mode: WeightMode::Euclidean,
        }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn weight_mode(&self) -> WeightMode {
        self.weight_mode
    }

    pub fn is_hilbert(&self) -> bool {
        self.p == 2.0
    }

    /// Grid on `[a,b]` with this geometry's weight mode.
    pub fn grid(&self, a: f64, b: f64, d: usize) -> Result<Grid> {
        Grid::new(a, b, d, self.weight_mode)
    }

    pub(crate) fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.mode() != self.weight_mode {
            return Err(invalid(
                "weight_mode",
                format!(
                    "geometry uses {} weights but the grid uses {}",
                    self.weight_mode,
                    grid.mode()
                ),
            ));
        }
        Ok(())
    }
}

impl Default for LpGeometry {
    fn default() -> Self {
        Self::hilbert()
    }
}

/// Element of the dual space, stored as coefficients against the grid.
#[derive(Debug, Clone)]
pub struct DualVector {
    grid: Arc<Grid>,
    coeffs: Vec<f64>,
}

impl DualVector {
    pub fn new(grid: Arc<Grid>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(invalid(
                "coeffs",
                format!("expected {} coefficients, got {}", grid.len(), coeffs.len()),
            ));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(invalid("coeffs", "non-finite coefficient"));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let d = grid.len();
        Self {
            grid,
            coeffs: vec![0.0; d],
        }
    }

    pub(crate) fn from_raw(grid: Arc<Grid>, coeffs: Vec<f64>) -> Self {
        debug_assert_eq!(coeffs.len(), grid.len());
        Self { grid, coeffs }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn scaled(&self, c: f64) -> DualVector {
        DualVector::from_raw(self.grid.clone(), self.coeffs.iter().map(|v| c * v).collect())
    }
}

// Slice kernels shared by the statistic code paths.

pub(crate) fn norm_slice(x: &[f64], w: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        return x.iter().zip(w).map(|(v, w)| w * v * v).sum::<f64>().sqrt();
    }
    let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = x
        .iter()
        .zip(w)
        .map(|(v, w)| w * (v.abs() / scale).powf(p))
        .sum();
    scale * s.powf(1.0 / p)
}

/// Writes the spatial sign of `x` into `out` and returns `||x||`.
pub(crate) fn sgn_into(x: &[f64], w: &[f64], p: f64, out: &mut [f64]) -> f64 {
    let norm = norm_slice(x, w, p);
    if norm == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return 0.0;
    }
    if p == 2.0 {
        for (o, v) in out.iter_mut().zip(x) {
            *o = v / norm;
        }
    } else {
        for (o, v) in out.iter_mut().zip(x) {
            *o = v.signum() * (v.abs() / norm).powf(p - 1.0);
            if *v == 0.0 {
                *o = 0.0;
            }
        }
    }
    norm
}

pub(crate) fn pair_slice(f: &[f64], h: &[f64], w: &[f64]) -> f64 {
    f.iter().zip(h).zip(w).map(|((f, h), w)| w * f * h).sum()
}

pub(crate) fn dual_norm_slice(f: &[f64], w: &[f64], q: f64) -> f64 {
    norm_slice(f, w, q)
}

/// `(sum_i w_i |x_i|^p)^(1/p)` using the curve's grid weights.
pub fn lp_norm(x: &Curve, geom: &LpGeometry) -> f64 {
    norm_slice(x.values(), x.grid().weights(), geom.p())
}

/// Gateaux derivative of the norm at `x`; the zero dual vector at `x = 0`.
///
/// Coefficient `i` is `sign(x_i) |x_i|^(p-1) / ||x||^(p-1)`.
pub fn sgn(x: &Curve, geom: &LpGeometry) -> DualVector {
    let mut out = vec![0.0; x.values().len()];
    sgn_into(x.values(), x.grid().weights(), geom.p(), &mut out);
    DualVector::from_raw(x.grid().clone(), out)
}

/// Action `f(h) = sum_i w_i f_i h_i` of a dual vector on a curve.
pub fn pair(f: &DualVector, h: &Curve) -> Result<f64> {
    if !same_grid(f.grid(), h.grid()) {
        return Err(Error::GridMismatch);
    }
    Ok(pair_slice(f.coeffs(), h.values(), h.grid().weights()))
}

/// Weighted `q`-norm of the coefficients, `1/p + 1/q = 1`.
pub fn dual_norm(f: &DualVector, geom: &LpGeometry) -> f64 {
    dual_norm_slice(f.coeffs(), f.grid().weights(), geom.q())
}
