//! Finite-sample size and power studies.
//!
//! Replicate `r` draws its X and Y samples from the streams
//! `(seed, REPLICATE, r, SAMPLE_X | SAMPLE_Y)` and calibrates every test from
//! `(seed, REPLICATE, r, CALIBRATION)`. The same base samples and calibration
//! streams serve every `(shift, c)` cell, so power curves are computed under
//! common random numbers and rates at different `c` are directly comparable.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fspace::{Grid, LpGeometry, Sample, WeightMode};
use crate::meantests::{mean_tests, MeanTest, MeanTestConfig, DEFAULT_CUMVAR_THRESHOLD};
use crate::rng::{self, tag};
use crate::simproc::{KlGenerator, KlSpec, ShiftKind, ShiftSpec};
use crate::wmw::calibration::{check_alpha, check_draws};
use crate::wmw::{wmw_test, GammaEstimator, WmwConfig, DEFAULT_MC_DRAWS, DEFAULT_TRUNC_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestId {
    Wmw,
    Cff,
    Hkr1,
    Hkr2,
}

impl TestId {
    pub const ALL: [TestId; 4] = [TestId::Wmw, TestId::Cff, TestId::Hkr1, TestId::Hkr2];

    pub(crate) fn tag(self) -> u64 {
        match self {
            TestId::Wmw => tag::WMW,
            TestId::Cff => tag::CFF,
            TestId::Hkr1 => tag::HKR1,
            TestId::Hkr2 => tag::HKR2,
        }
    }

    pub fn mean_test(self) -> Option<MeanTest> {
        match self {
            TestId::Wmw => None,
            TestId::Cff => Some(MeanTest::Cff),
            TestId::Hkr1 => Some(MeanTest::Hkr1),
            TestId::Hkr2 => Some(MeanTest::Hkr2),
        }
    }
}

impl fmt::Display for TestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestId::Wmw => "wmw",
            TestId::Cff => "cff",
            TestId::Hkr1 => "hkr1",
            TestId::Hkr2 => "hkr2",
        })
    }
}

impl FromStr for TestId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wmw" => Ok(TestId::Wmw),
            "cff" => Ok(TestId::Cff),
            "hkr1" => Ok(TestId::Hkr1),
            "hkr2" => Ok(TestId::Hkr2),
            other => Err(invalid("test", format!("unknown test `{other}`"))),
        }
    }
}

/// Settings for running the test suite on one pair of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub alpha: f64,
    pub n_mc: usize,
    pub p: f64,
    pub weight_mode: WeightMode,
    pub gamma: GammaEstimator,
    pub cumvar_threshold: f64,
    pub l_override: Option<usize>,
    pub trunc_tol: f64,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            n_mc: DEFAULT_MC_DRAWS,
            p: 2.0,
            weight_mode: WeightMode::Euclidean,
            gamma: GammaEstimator::default(),
            cumvar_threshold: DEFAULT_CUMVAR_THRESHOLD,
            l_override: None,
            trunc_tol: DEFAULT_TRUNC_TOL,
        }
    }
}

impl TestOptions {
    pub fn geometry(&self) -> Result<LpGeometry> {
        LpGeometry::new(self.p, self.weight_mode)
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_draws(self.n_mc)?;
        self.geometry()?;
        if !(self.cumvar_threshold > 0.0 && self.cumvar_threshold <= 1.0) {
            return Err(invalid("cumvar_threshold", "need 0 < threshold <= 1"));
        }
        if self.l_override == Some(0) {
            return Err(invalid("l_override", "need at least one component"));
        }
        if !(self.trunc_tol >= 0.0) {
            return Err(invalid("trunc_tol", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn wmw_config(&self, seed: u64) -> WmwConfig {
        WmwConfig {
            alpha: self.alpha,
            n_mc: self.n_mc,
            seed: rng::derive(seed, &[tag::WMW]),
            trunc_tol: self.trunc_tol,
            gamma: self.gamma,
        }
    }

    pub fn mean_config(&self, seed: u64) -> MeanTestConfig {
        MeanTestConfig {
            alpha: self.alpha,
            n_mc: self.n_mc,
            seed,
            cumvar_threshold: self.cumvar_threshold,
            l_override: self.l_override,
            trunc_tol: self.trunc_tol,
        }
    }
}

/// Runs `tests` on one pair of samples and returns the reject decisions in
/// the order of `tests`. `seed` feeds the calibration streams.
pub fn run_tests(x: &Sample, y: &Sample, tests: &[TestId], opts: &TestOptions, seed: u64) -> Result<Vec<bool>> {
    let wmw = if tests.contains(&TestId::Wmw) {
        let geom = opts.geometry()?;
        Some(wmw_test(x, y, &geom, &opts.wmw_config(seed))?.reject)
    } else {
        None
    };
    let means = if tests.iter().any(|t| t.mean_test().is_some()) {
        Some(mean_tests(x, y, &opts.mean_config(seed))?)
    } else {
        None
    };
    Ok(tests
        .iter()
        .map(|t| match t {
            TestId::Wmw => wmw.expect("computed"),
            TestId::Cff => means.as_ref().expect("computed")[0].reject,
            TestId::Hkr1 => means.as_ref().expect("computed")[1].reject,
            TestId::Hkr2 => means.as_ref().expect("computed")[2].reject,
        })
        .collect())
}

/// A shift shape with the amplitudes to study. The amplitude stored in
/// `shift` is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftGrid {
    pub shift: ShiftSpec,
    pub c_values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub m: usize,
    pub n: usize,
    pub grid: Arc<Grid>,
    pub distribution: KlSpec,
    pub shifts: Vec<ShiftGrid>,
    pub tests: Vec<TestId>,
    pub replicates: usize,
    pub seed: u64,
    pub options: TestOptions,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(invalid("replicates", "need at least one replicate"));
        }
        if self.m < 2 || self.n < 2 {
            return Err(invalid("m, n", "need at least two curves per group"));
        }
        if self.tests.is_empty() {
            return Err(invalid("tests", "need at least one test"));
        }
        if self.shifts.is_empty() {
            return Err(invalid("shifts", "need at least one shift"));
        }
        for s in &self.shifts {
            if s.c_values.is_empty() {
                return Err(invalid("shifts", format!("shift {} has no c values", s.shift.kind)));
            }
            if s.c_values.iter().any(|c| !c.is_finite()) {
                return Err(invalid("shifts", "c values must be finite"));
            }
            s.shift.curve(&self.grid)?;
        }
        self.options.validate()?;
        self.options.geometry()?.check_grid(&self.grid)?;
        self.distribution.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub test: TestId,
    /// `None` for subsample studies.
    pub shift: Option<ShiftKind>,
    pub c: Option<f64>,
    pub rejection_rate: f64,
    pub mc_stderr: f64,
    pub replicates: usize,
    pub rejections: usize,
}

impl PowerRow {
    fn new(test: TestId, shift: Option<ShiftKind>, c: Option<f64>, rejections: usize, replicates: usize) -> Self {
        let r = rejections as f64 / replicates as f64;
        Self {
            test,
            shift,
            c,
            rejection_rate: r,
            mc_stderr: (r * (1.0 - r) / replicates as f64).sqrt(),
            replicates,
            rejections,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub rows: Vec<PowerRow>,
    /// Per-replicate decisions aligned with `rows`; not serialized.
    #[serde(skip)]
    pub decisions: Vec<Vec<bool>>,
}

impl PowerTable {
    fn position(&self, test: TestId, shift: Option<ShiftKind>, c: Option<f64>) -> Option<usize> {
        self.rows.iter().position(|r| r.test == test && r.shift == shift && r.c == c)
    }

    pub fn get(&self, test: TestId, shift: Option<ShiftKind>, c: Option<f64>) -> Option<&PowerRow> {
        self.position(test, shift, c).map(|k| &self.rows[k])
    }

    /// Rate difference `a - b` in one cell and its Monte Carlo standard
    /// error. Both tests see the same replicates, so the error comes from
    /// the paired indicator differences. `None` when the cell is missing or
    /// decisions were not retained.
    pub fn paired_difference(&self, a: TestId, b: TestId, shift: Option<ShiftKind>, c: Option<f64>) -> Option<(f64, f64)> {
        let da = self.decisions.get(self.position(a, shift, c)?)?;
        let db = self.decisions.get(self.position(b, shift, c)?)?;
        let r = da.len();
        if r < 2 || db.len() != r {
            return None;
        }
        let diffs: Vec<f64> = da.iter().zip(db).map(|(&x, &y)| x as u8 as f64 - y as u8 as f64).collect();
        let mean = diffs.iter().sum::<f64>() / r as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
        Some((mean, (var / r as f64).sqrt()))
    }
}

/// Rejection rates over replicated samples; rows are ordered by shift, then
/// `c`, then test.
pub fn run_power_study(config: &ExperimentConfig) -> Result<PowerTable> {
    config.validate()?;
    let gen = KlGenerator::new(config.distribution, config.grid.clone())?;
    let deltas: Vec<_> = config
        .shifts
        .iter()
        .map(|s| s.shift.with_amplitude(1.0).curve(&config.grid))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, f64)> = config
        .shifts
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.c_values.iter().map(move |&c| (i, c)))
        .collect();
    let tests = &config.tests;

    let per_replicate: Vec<Vec<bool>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let base = [tag::REPLICATE, r as u64];
            let sx = rng::derive(config.seed, &[base[0], base[1], tag::SAMPLE_X]);
            let sy = rng::derive(config.seed, &[base[0], base[1], tag::SAMPLE_Y]);
            let cal = rng::derive(config.seed, &[base[0], base[1], tag::CALIBRATION]);
            let x = gen.sample(config.m, sx)?;
            let y0 = gen.sample(config.n, sy)?;
            let mut null_decisions: Option<Vec<bool>> = None;
            let mut out = Vec::with_capacity(cells.len() * tests.len());
            for &(i, c) in &cells {
                let decisions = if c == 0.0 {
                    // Every shift shape gives the same unshifted sample.
                    if null_decisions.is_none() {
                        null_decisions = Some(run_tests(&x, &y0, tests, &config.options, cal)?);
                    }
                    null_decisions.clone().expect("just set")
                } else {
                    let delta = deltas[i].scaled(c);
                    let y = y0.map(|v| v.add(&delta).expect("shared grid"))?;
                    run_tests(&x, &y, tests, &config.options, cal)?
                };
                out.extend(decisions);
            }
            Ok(out)
        })
        .enumerate()
        .map(|(index, res): (usize, Result<Vec<bool>>)| {
            res.map_err(|e| Error::Replicate {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut counts = vec![0usize; cells.len() * tests.len()];
    for decisions in &per_replicate {
        for (c, &d) in counts.iter_mut().zip(decisions) {
            *c += d as usize;
        }
    }
    let mut rows = Vec::with_capacity(counts.len());
    for (k, &(i, c)) in cells.iter().enumerate() {
        for (t, &test) in tests.iter().enumerate() {
            rows.push(PowerRow::new(
                test,
                Some(config.shifts[i].shift.kind),
                Some(c),
                counts[k * tests.len() + t],
                config.replicates,
            ));
        }
    }
    let decisions = (0..counts.len())
        .map(|j| per_replicate.iter().map(|d| d[j]).collect())
        .collect();
    Ok(PowerTable { rows, decisions })
}

/// Subsample size `round(fraction * size)`, at least 3.
pub fn subsample_size(size: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid("fraction", format!("need 0 < fraction <= 1, got {fraction}")));
    }
    if size < 3 {
        return Err(Error::InsufficientData {
            what: "a subsample",
            needed: 3,
            got: size,
        });
    }
    Ok(((fraction * size as f64).round() as usize).clamp(3, size))
}

/// Rejection proportions over `repeats` random subsamples drawn without
/// replacement from each group. All repeats share one calibration seed, so
/// `fraction = 1` reproduces the full-data decisions of [`run_tests`] with
/// [`subsample_calibration_seed`].
pub fn run_subsample_study(
    x: &Sample,
    y: &Sample,
    fraction: f64,
    repeats: usize,
    tests: &[TestId],
    opts: &TestOptions,
    seed: u64,
) -> Result<PowerTable> {
    if repeats == 0 {
        return Err(invalid("repeats", "need at least one repeat"));
    }
    if tests.is_empty() {
        return Err(invalid("tests", "need at least one test"));
    }
    opts.validate()?;
    let kx = subsample_size(x.size(), fraction)?;
    let ky = subsample_size(y.size(), fraction)?;
    let cal = subsample_calibration_seed(seed);
    let per_repeat: Vec<Vec<bool>> = (0..repeats)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(seed, &[tag::SUBSAMPLE, k as u64]);
            let mut ix = index::sample(&mut rng, x.size(), kx).into_vec();
            let mut iy = index::sample(&mut rng, y.size(), ky).into_vec();
            ix.sort_unstable();
            iy.sort_unstable();
            run_tests(&x.select(&ix)?, &y.select(&iy)?, tests, opts, cal).map_err(|e| Error::Replicate {
                index: k,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let rows = tests
        .iter()
        .enumerate()
        .map(|(t, &test)| {
            let count = per_repeat.iter().filter(|d| d[t]).count();
            PowerRow::new(test, None, None, count, repeats)
        })
        .collect();
    let decisions = (0..tests.len()).map(|t| per_repeat.iter().map(|d| d[t]).collect()).collect();
    Ok(PowerTable { rows, decisions })
}

pub fn subsample_calibration_seed(seed: u64) -> u64 {
    rng::derive(seed, &[tag::SUBSAMPLE, tag::CALIBRATION])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub test: TestId,
    pub shift: Option<ShiftKind>,
    pub c: Option<f64>,
    pub rejection_rate: f64,
    pub baseline_rate: f64,
    /// `None` when the baseline rate is zero.
    pub ratio: Option<f64>,
}

/// Each row's rate divided by the `baseline` test's rate in the same cell.
pub fn power_ratio_table(table: &PowerTable, baseline: TestId) -> Result<Vec<RatioRow>> {
    if !table.rows.iter().any(|r| r.test == baseline) {
        return Err(invalid("baseline", format!("no rows for test {baseline}")));
    }
    table
        .rows
        .iter()
        .map(|row| {
            let base = table
                .get(baseline, row.shift, row.c)
                .ok_or_else(|| invalid("baseline", format!("no {baseline} row for this cell")))?;
            Ok(RatioRow {
                test: row.test,
                shift: row.shift,
                c: row.c,
                rejection_rate: row.rejection_rate,
                baseline_rate: base.rejection_rate,
                ratio: (base.rejection_rate > 0.0).then(|| row.rejection_rate / base.rejection_rate),
            })
        })
        .collect()
}
