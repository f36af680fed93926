//! TOML run configuration shared by `power` and `asymptotic`.

use std::fmt;
use std::sync::Arc;

use fwmw::asympt::{DistributionSpec, HessianForm, DEFAULT_MC_INNER, DEFAULT_MC_OUTER};
use fwmw::harness::{ExperimentConfig, ShiftGrid, TestId, TestOptions};
use fwmw::meantests::DEFAULT_CUMVAR_THRESHOLD;
use fwmw::simproc::{KlSpec, ShiftKind, ShiftSpec, DEFAULT_KL_TERMS};
use fwmw::wmw::{GammaEstimator, DEFAULT_MC_DRAWS, DEFAULT_TRUNC_TOL};
use fwmw::{Grid, WeightMode};
use serde::{Deserialize, Serialize};

/// A schema violation, reported with the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub path: String,
    pub reason: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

/// All violations found in one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationErrors(pub Vec<FieldError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_size")]
    pub m: usize,
    #[serde(default = "default_size")]
    pub n: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_tests")]
    pub tests: Vec<TestId>,
    /// Denominator of the ratio table.
    #[serde(default = "default_baseline")]
    pub baseline: TestId,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub shifts: Vec<ShiftConfig>,
    #[serde(default)]
    pub options: OptionsConfig,
    #[serde(default)]
    pub asymptotic: AsymptoticConfig,
}

fn default_size() -> usize {
    15
}
fn default_replicates() -> usize {
    1000
}
fn default_tests() -> Vec<TestId> {
    TestId::ALL.to_vec()
}
fn default_baseline() -> TestId {
    TestId::Wmw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub a: f64,
    pub b: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            a: 0.0,
            b: 1.0,
            points: 250,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Sbm,
    T,
    TIndependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<f64>,
    #[serde(default = "default_terms")]
    pub terms: usize,
}

fn default_terms() -> usize {
    DEFAULT_KL_TERMS
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Sbm,
            dof: None,
            terms: DEFAULT_KL_TERMS,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self) -> KlSpec {
        let base = match (self.kind, self.dof) {
            (ModelKind::Sbm, _) => KlSpec::sbm(),
            (ModelKind::T, dof) => KlSpec::t_process(dof.unwrap_or(f64::NAN)),
            (ModelKind::TIndependent, dof) => KlSpec {
                terms: DEFAULT_KL_TERMS,
                innovation: fwmw::simproc::Innovation::StudentTIndependent {
                    dof: dof.unwrap_or(f64::NAN),
                },
            },
        };
        base.with_terms(self.terms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub kind: ShiftKind,
    pub c: Vec<f64>,
    /// Shape on the grid, required for `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl ShiftConfig {
    pub fn spec(&self) -> ShiftSpec {
        match &self.values {
            Some(v) => ShiftSpec::custom(v.clone(), 1.0),
            None => ShiftSpec::new(self.kind, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub weight_mode: WeightMode,
    #[serde(default)]
    pub gamma_estimator: GammaEstimator,
    #[serde(default = "default_cumvar")]
    pub cumvar_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default = "default_trunc_tol")]
    pub trunc_tol: f64,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_n_mc() -> usize {
    DEFAULT_MC_DRAWS
}
fn default_p() -> f64 {
    2.0
}
fn default_cumvar() -> f64 {
    DEFAULT_CUMVAR_THRESHOLD
}
fn default_trunc_tol() -> f64 {
    DEFAULT_TRUNC_TOL
}

impl Default for OptionsConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            n_mc: default_n_mc(),
            p: default_p(),
            weight_mode: WeightMode::default(),
            gamma_estimator: GammaEstimator::default(),
            cumvar_threshold: default_cumvar(),
            l: None,
            trunc_tol: default_trunc_tol(),
        }
    }
}

impl OptionsConfig {
    pub fn test_options(&self) -> TestOptions {
        TestOptions {
            alpha: self.alpha,
            n_mc: self.n_mc,
            p: self.p,
            weight_mode: self.weight_mode,
            gamma: self.gamma_estimator,
            cumvar_threshold: self.cumvar_threshold,
            l_override: self.l,
            trunc_tol: self.trunc_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticConfig {
    #[serde(default = "default_outer")]
    pub mc_outer: usize,
    #[serde(default = "default_inner")]
    pub mc_inner: usize,
    /// Limiting proportion `m / N`.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub hessian: HessianForm,
}

fn default_outer() -> usize {
    DEFAULT_MC_OUTER
}
fn default_inner() -> usize {
    DEFAULT_MC_INNER
}
fn default_gamma() -> f64 {
    0.5
}

impl Default for AsymptoticConfig {
    fn default() -> Self {
        Self {
            mc_outer: default_outer(),
            mc_inner: default_inner(),
            gamma: default_gamma(),
            hessian: HessianForm::default(),
        }
    }
}

/// Which subcommand the configuration feeds; `power` needs replicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Power,
    Asymptotic,
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn validate(&self, purpose: Purpose) -> Result<(), ValidationErrors> {
        let mut errs = Vec::new();
        let mut bad = |path: String, reason: &str| {
            errs.push(FieldError {
                path,
                reason: reason.to_string(),
            })
        };
        if purpose == Purpose::Power {
            if self.replicates == 0 {
                bad("replicates".into(), "must be at least 1");
            }
            if self.m < 2 {
                bad("m".into(), "each group needs at least 2 curves");
            }
            if self.n < 2 {
                bad("n".into(), "each group needs at least 2 curves");
            }
            if self.m + self.n < 3 {
                bad("n".into(), "need m + n >= 3");
            }
        }
        if self.tests.is_empty() {
            bad("tests".into(), "list at least one test");
        }
        if !self.tests.contains(&self.baseline) {
            bad("baseline".into(), "must be one of `tests`");
        }
        let g = &self.grid;
        if !(g.a.is_finite() && g.b.is_finite()) {
            bad("grid.a".into(), "endpoints must be finite");
        }
        if g.points == 0 {
            bad("grid.points".into(), "must be at least 1");
        } else if g.points == 1 && g.a != g.b {
            bad("grid.b".into(), "a single-point grid needs a == b");
        } else if g.points > 1 && g.b <= g.a {
            bad("grid.b".into(), "must exceed grid.a");
        }
        match self.model.kind {
            ModelKind::Sbm => {
                if self.model.dof.is_some() {
                    bad("model.dof".into(), "only t models take degrees of freedom");
                }
            }
            ModelKind::T | ModelKind::TIndependent => match self.model.dof {
                None => bad("model.dof".into(), "required for t models"),
                Some(r) if !(r > 0.0 && r.is_finite()) => bad("model.dof".into(), "must be positive"),
                _ => {}
            },
        }
        if self.model.terms == 0 {
            bad("model.terms".into(), "must be at least 1");
        }
        if self.shifts.is_empty() {
            bad("shifts".into(), "list at least one shift");
        }
        for (i, s) in self.shifts.iter().enumerate() {
            if s.c.is_empty() {
                bad(format!("shifts[{i}].c"), "list at least one amplitude");
            }
            for (j, c) in s.c.iter().enumerate() {
                if !c.is_finite() {
                    bad(format!("shifts[{i}].c[{j}]"), "must be finite");
                }
            }
            match (s.kind, &s.values) {
                (ShiftKind::Custom, None) => bad(format!("shifts[{i}].values"), "required for custom shifts"),
                (ShiftKind::Custom, Some(v)) if v.len() != g.points => {
                    bad(format!("shifts[{i}].values"), "length must equal grid.points")
                }
                (ShiftKind::Custom, Some(v)) if v.iter().any(|x| !x.is_finite()) => {
                    bad(format!("shifts[{i}].values"), "entries must be finite")
                }
                (k, Some(_)) if k != ShiftKind::Custom => {
                    bad(format!("shifts[{i}].values"), "only custom shifts take values")
                }
                _ => {}
            }
        }
        let o = &self.options;
        if !(o.alpha > 0.0 && o.alpha < 1.0) {
            bad("options.alpha".into(), "must lie in (0, 1)");
        }
        if o.n_mc < fwmw::wmw::MIN_DRAWS {
            bad("options.n_mc".into(), &format!("must be at least {}", fwmw::wmw::MIN_DRAWS));
        }
        if !(o.p >= 2.0 && o.p.is_finite()) {
            bad("options.p".into(), "must be finite and at least 2");
        }
        if !(o.cumvar_threshold > 0.0 && o.cumvar_threshold <= 1.0) {
            bad("options.cumvar_threshold".into(), "must lie in (0, 1]");
        }
        if o.l == Some(0) {
            bad("options.l".into(), "must be at least 1");
        }
        if !(o.trunc_tol >= 0.0 && o.trunc_tol < 1.0) {
            bad("options.trunc_tol".into(), "must lie in [0, 1)");
        }
        if purpose == Purpose::Asymptotic {
            let a = &self.asymptotic;
            if a.mc_outer < 2 {
                bad("asymptotic.mc_outer".into(), "must be at least 2");
            }
            if a.mc_inner < 2 {
                bad("asymptotic.mc_inner".into(), "must be at least 2");
            }
            if !(a.gamma > 0.0 && a.gamma < 1.0) {
                bad("asymptotic.gamma".into(), "must lie in (0, 1)");
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ValidationErrors(errs))
        }
    }

    pub fn grid(&self) -> anyhow::Result<Arc<Grid>> {
        let g = &self.grid;
        Ok(Arc::new(Grid::new(g.a, g.b, g.points, self.options.weight_mode)?))
    }

    pub fn experiment(&self) -> anyhow::Result<ExperimentConfig> {
        self.validate(Purpose::Power)?;
        Ok(ExperimentConfig {
            m: self.m,
            n: self.n,
            grid: self.grid()?,
            distribution: self.model.spec(),
            shifts: self
                .shifts
                .iter()
                .map(|s| ShiftGrid {
                    shift: s.spec(),
                    c_values: s.c.clone(),
                })
                .collect(),
            tests: self.tests.clone(),
            replicates: self.replicates,
            seed: self.seed,
            options: self.options.test_options(),
        })
    }

    pub fn distribution(&self) -> anyhow::Result<DistributionSpec> {
        self.validate(Purpose::Asymptotic)?;
        Ok(DistributionSpec::new(self.model.spec(), self.grid()?)
            .with_budget(self.asymptotic.mc_outer, self.asymptotic.mc_inner)
            .with_seed(self.seed))
    }
}
