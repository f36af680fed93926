use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fwmw::asympt::AsymptoticStudy;
use fwmw::harness::{power_ratio_table, run_power_study, run_subsample_study, subsample_calibration_seed, TestId, TestOptions};
use fwmw::meantests::{mean_tests, DEFAULT_CUMVAR_THRESHOLD};
use fwmw::rng::{self, tag};
use fwmw::simproc::{apply_shift, gen_sample, KlSpec, ShiftKind, ShiftSpec, DEFAULT_KL_TERMS};
use fwmw::wmw::{wmw_test, GammaEstimator, DEFAULT_MC_DRAWS, DEFAULT_TRUNC_TOL};
use fwmw::{Grid, LpGeometry, WeightMode};
use serde::de::DeserializeOwned;

use crate::config::{ModelConfig, ModelKind, Purpose, RunConfig};
use crate::csvio::{load_samples, write_sample, CsvLayout};
use crate::report::*;

/// Environment variable fixing the worker thread count.
pub const THREADS_ENV: &str = "FWMW_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fwmw", version, about = "Spatial-rank two-sample tests for functional data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test two samples of curves read from CSV.
    Test(TestCmd),
    /// Finite-sample size and power study from a TOML config.
    Power(StudyCmd),
    /// Local asymptotic power curves from a TOML config.
    Asymptotic(StudyCmd),
    /// Rejection proportions over random subsamples of two CSV samples.
    Subsample(SubsampleCmd),
    /// Emit simulated curves as CSV.
    Simulate(SimulateCmd),
}

/// Parses a value through its serde name, e.g. `trapezoid` or `x-only`.
fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// One CSV per sample, or a single labelled CSV with --group-column.
    #[arg(required = true, num_args = 1..=2)]
    pub files: Vec<PathBuf>,
    /// First row holds grid coordinates.
    #[arg(long)]
    pub header: bool,
    /// First column holds the group label; the first label seen is sample X.
    #[arg(long)]
    pub group_column: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Monte Carlo draws for calibration.
    #[arg(long, default_value_t = DEFAULT_MC_DRAWS)]
    pub n_mc: usize,
    /// Norm exponent, at least 2.
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// euclidean or trapezoid.
    #[arg(long, default_value = "euclidean", value_parser = serde_enum::<WeightMode>)]
    pub weight_mode: WeightMode,
    /// pooled-sample, pooled or x-only.
    #[arg(long, default_value = "pooled-sample", value_parser = serde_enum::<GammaEstimator>)]
    pub gamma_estimator: GammaEstimator,
    /// Cumulative variance fraction selecting the HKR components.
    #[arg(long, default_value_t = DEFAULT_CUMVAR_THRESHOLD)]
    pub cumvar: f64,
    /// Fixed number of HKR components, overriding --cumvar.
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TRUNC_TOL)]
    pub trunc_tol: f64,
    /// Comma-separated subset of wmw, cff, hkr1, hkr2.
    #[arg(long, value_delimiter = ',', default_value = "wmw")]
    pub tests: Vec<TestId>,
}

impl TestArgs {
    fn options(&self) -> TestOptions {
        TestOptions {
            alpha: self.alpha,
            n_mc: self.n_mc,
            p: self.p,
            weight_mode: self.weight_mode,
            gamma: self.gamma_estimator,
            cumvar_threshold: self.cumvar,
            l_override: self.l,
            trunc_tol: self.trunc_tol,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TestCmd {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub test: TestArgs,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StudyCmd {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for the CSV tables and JSON summary; the main table goes to
    /// stdout when omitted.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SubsampleCmd {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub test: TestArgs,
    /// Fraction of each group kept per repeat.
    #[arg(long, default_value_t = 0.2)]
    pub fraction: f64,
    #[arg(long, default_value_t = 1000)]
    pub repeats: usize,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateCmd {
    /// sbm, t or t-independent.
    #[arg(long, default_value = "sbm", value_parser = serde_enum::<ModelKind>)]
    pub model: ModelKind,
    #[arg(long)]
    pub dof: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_KL_TERMS)]
    pub terms: usize,
    /// Curves in sample X.
    #[arg(long, default_value_t = 15)]
    pub m: usize,
    /// Curves in sample Y, which carries the shift.
    #[arg(long, default_value_t = 15)]
    pub n: usize,
    #[arg(long, default_value_t = 250)]
    pub points: usize,
    /// delta1, delta2 or delta3.
    #[arg(long, default_value = "delta1", value_parser = serde_enum::<ShiftKind>)]
    pub shift: ShiftKind,
    /// Shift amplitude.
    #[arg(long, default_value_t = 0.0)]
    pub c: f64,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Output CSV (labelled, with a grid header); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Test(c) => cmd_test(&c),
        Command::Power(c) => cmd_power(&c),
        Command::Asymptotic(c) => cmd_asymptotic(&c),
        Command::Subsample(c) => cmd_subsample(&c),
        Command::Simulate(c) => cmd_simulate(&c),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
    // A pool may already exist when called twice in one process (tests).
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn load(input: &InputArgs, mode: WeightMode) -> Result<(fwmw::Sample, fwmw::Sample, Vec<InputDigest>)> {
    let paths: Vec<&Path> = input.files.iter().map(PathBuf::as_path).collect();
    let layout = CsvLayout {
        header: input.header,
        group_column: input.group_column,
    };
    let (x, y) = load_samples(&paths, layout, mode)?;
    let digests = paths.iter().map(|p| InputDigest::of(p)).collect::<Result<_>>()?;
    Ok((x, y, digests))
}

fn dedup_tests(tests: &[TestId]) -> Result<Vec<TestId>> {
    if tests.is_empty() {
        bail!("--tests: list at least one test");
    }
    let mut t = tests.to_vec();
    t.sort();
    t.dedup();
    Ok(t)
}

pub fn cmd_test(cmd: &TestCmd) -> Result<()> {
    let report = test_report(cmd)?;
    emit(cmd.out.as_deref(), to_json(&report)?.as_bytes())
}

/// Runs the requested tests with the same per-test seeds as a power study
/// replicate calibrated from `--seed`.
pub fn test_report(cmd: &TestCmd) -> Result<TestReport> {
    let opts = cmd.test.options();
    opts.validate()?;
    let tests = dedup_tests(&cmd.test.tests)?;
    let (x, y, inputs) = load(&cmd.input, opts.weight_mode)?;
    let geom = opts.geometry()?;
    let seed = cmd.test.seed;

    let wmw = if tests.contains(&TestId::Wmw) {
        let cfg = opts.wmw_config(seed);
        Some(WmwSection::from(&wmw_test(&x, &y, &geom, &cfg)?))
    } else {
        None
    };
    let mut means = Vec::new();
    if tests.iter().any(|t| *t != TestId::Wmw) {
        let cfg = opts.mean_config(seed);
        let results = mean_tests(&x, &y, &cfg)?;
        for &t in tests.iter().filter(|t| **t != TestId::Wmw) {
            let which = t.mean_test().expect("mean test");
            let r = results.iter().find(|r| r.which == which).expect("all three computed");
            means.push(MeanSection::new(t, r, cfg.seed));
        }
    }
    let grid = x.grid();
    Ok(TestReport {
        provenance: Provenance::new("test", seed, &(&opts, &tests), inputs)?,
        data: DataSummary {
            m: x.size(),
            n: y.size(),
            points: grid.len(),
            grid_a: grid.a(),
            grid_b: grid.b(),
        },
        options: opts,
        wmw,
        mean_tests: means,
    })
}

fn read_config(path: &Path, purpose: Purpose) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let cfg = RunConfig::parse(&text).with_context(|| format!("{}: schema violation", path.display()))?;
    cfg.validate(purpose)?;
    Ok(cfg)
}

fn write_outputs(dir: Option<&Path>, main: (&str, Vec<u8>), extra: Vec<(&str, Vec<u8>)>) -> Result<()> {
    match dir {
        None => emit(None, &main.1),
        Some(d) => {
            fs::create_dir_all(d).with_context(|| format!("cannot create {}", d.display()))?;
            for (name, bytes) in std::iter::once(main).chain(extra) {
                emit(Some(&d.join(name)), &bytes)?;
            }
            Ok(())
        }
    }
}

pub fn cmd_power(cmd: &StudyCmd) -> Result<()> {
    let cfg = read_config(&cmd.config, Purpose::Power)?;
    let table = run_power_study(&cfg.experiment()?)?;
    let ratios = power_ratio_table(&table, cfg.baseline)?;
    let mut main = Vec::new();
    write_power_csv(&mut main, &table)?;
    let mut ratio_csv = Vec::new();
    write_ratio_csv(&mut ratio_csv, &ratios)?;
    let summary = PowerSummary {
        provenance: Provenance::new("power", cfg.seed, &cfg, Vec::new())?,
        config: cfg,
        table,
        ratios,
    };
    write_outputs(
        cmd.out_dir.as_deref(),
        ("power.csv", main),
        vec![("ratios.csv", ratio_csv), ("summary.json", to_json(&summary)?.into_bytes())],
    )
}

pub fn cmd_asymptotic(cmd: &StudyCmd) -> Result<()> {
    let cfg = read_config(&cmd.config, Purpose::Asymptotic)?;
    let dist = cfg.distribution()?;
    let geom = LpGeometry::new(cfg.options.p, cfg.options.weight_mode)?;
    let mut study = AsymptoticStudy::new(dist, geom);
    study.alpha = cfg.options.alpha;
    study.n_mc = cfg.options.n_mc;
    study.gamma = cfg.asymptotic.gamma;
    study.cumvar_threshold = cfg.options.cumvar_threshold;
    study.l_override = cfg.options.l;
    study.hessian = cfg.asymptotic.hessian;

    // Curves sharing a c grid run together so each shape is set up once.
    let mut curves = Vec::new();
    for s in &cfg.shifts {
        curves.extend(study.run(&[s.spec()], &s.c, &cfg.tests)?);
    }
    let mut main = Vec::new();
    write_asymptotic_csv(&mut main, &curves, cfg.baseline)?;
    let summary = AsymptoticSummary {
        provenance: Provenance::new("asymptotic", cfg.seed, &cfg, Vec::new())?,
        config: cfg,
        curves,
    };
    write_outputs(
        cmd.out_dir.as_deref(),
        ("asymptotic.csv", main),
        vec![("summary.json", to_json(&summary)?.into_bytes())],
    )
}

pub fn cmd_subsample(cmd: &SubsampleCmd) -> Result<()> {
    let opts = cmd.test.options();
    opts.validate()?;
    let tests = dedup_tests(&cmd.test.tests)?;
    let (x, y, inputs) = load(&cmd.input, opts.weight_mode)?;
    let seed = cmd.test.seed;
    let table = run_subsample_study(&x, &y, cmd.fraction, cmd.repeats, &tests, &opts, seed)?;
    let mut main = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut main);
        w.write_record(["test", "fraction", "repeats", "rejection_rate", "mc_stderr", "rejections"])?;
        for r in &table.rows {
            w.write_record([
                r.test.to_string(),
                cmd.fraction.to_string(),
                r.replicates.to_string(),
                r.rejection_rate.to_string(),
                r.mc_stderr.to_string(),
                r.rejections.to_string(),
            ])?;
        }
        w.flush()?;
    }
    let config = (&opts, &tests, cmd.fraction, cmd.repeats, subsample_calibration_seed(seed));
    let summary = SubsampleSummary {
        provenance: Provenance::new("subsample", seed, &config, inputs)?,
        options: opts,
        fraction: cmd.fraction,
        repeats: cmd.repeats,
        table,
    };
    write_outputs(
        cmd.out_dir.as_deref(),
        ("subsample.csv", main),
        vec![("summary.json", to_json(&summary)?.into_bytes())],
    )
}

pub fn cmd_simulate(cmd: &SimulateCmd) -> Result<()> {
    let model = ModelConfig {
        kind: cmd.model,
        dof: cmd.dof,
        terms: cmd.terms,
    };
    let spec: KlSpec = model.spec();
    spec.validate()?;
    if cmd.m == 0 || cmd.n == 0 {
        bail!("--m and --n must be positive");
    }
    if cmd.shift == ShiftKind::Custom {
        bail!("--shift: custom shapes are only available through power configs");
    }
    let grid = Arc::new(Grid::unit(cmd.points, WeightMode::Euclidean)?);
    let x = gen_sample(&spec, cmd.m, &grid, rng::derive(cmd.seed, &[tag::SAMPLE_X]))?;
    let y0 = gen_sample(&spec, cmd.n, &grid, rng::derive(cmd.seed, &[tag::SAMPLE_Y]))?;
    let y = apply_shift(&y0, &ShiftSpec::new(cmd.shift, cmd.c))?;

    let mut buf = Vec::new();
    write_sample(&mut buf, &x, Some("x"))?;
    let mut ybuf = Vec::new();
    write_sample(&mut ybuf, &y, Some("y"))?;
    // drop the second header line
    let body = ybuf.iter().position(|&b| b == b'\n').map_or(&ybuf[..0], |i| &ybuf[i + 1..]);
    buf.extend_from_slice(body);
    emit(cmd.out.as_deref(), &buf)
}
