//! Machine-readable outputs. Every randomized output carries its seed.

use std::io::Write;
use std::path::Path;

use anyhow::Result;
use fwmw::asympt::AsymptoticPowerCurve;
use fwmw::harness::{PowerTable, RatioRow, TestId, TestOptions};
use fwmw::meantests::MeanTestResult;
use fwmw::wmw::{GammaEstimator, WmwTestResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Number of leading eigenvalues echoed in a spectrum summary.
pub const SPECTRUM_HEAD: usize = 10;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_hex(&std::fs::read(path)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub config_sha256: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, config: &impl Serialize, inputs: Vec<InputDigest>) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: sha256_hex(&serde_json::to_vec(config)?),
            inputs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub retained: usize,
    pub total_variance: f64,
    pub trunc_tol: f64,
    pub leading_eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WmwSection {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub gamma_hat: f64,
    pub gamma_estimator: GammaEstimator,
    pub mc_draws: usize,
    pub calibration_seed: u64,
    pub spectrum: SpectrumSummary,
}

impl From<&WmwTestResult> for WmwSection {
    fn from(r: &WmwTestResult) -> Self {
        let s = &r.spectral;
        Self {
            statistic: r.statistic,
            critical_value: r.critical_value,
            p_value: r.p_value,
            reject: r.reject,
            alpha: r.alpha,
            gamma_hat: r.gamma_hat,
            gamma_estimator: r.gamma_estimator,
            mc_draws: r.mc_draws,
            calibration_seed: r.seed,
            spectrum: SpectrumSummary {
                retained: s.retained,
                total_variance: s.total_variance,
                trunc_tol: s.trunc_tol,
                leading_eigenvalues: s.eigenvalues.iter().take(SPECTRUM_HEAD).copied().collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSection {
    pub test: TestId,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    /// Principal components used by the HKR tests.
    pub components: usize,
    pub calibration_seed: u64,
}

impl MeanSection {
    pub fn new(test: TestId, r: &MeanTestResult, calibration_seed: u64) -> Self {
        Self {
            test,
            statistic: r.statistic,
            p_value: r.p_value,
            reject: r.reject,
            alpha: r.alpha,
            components: r.l,
            calibration_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub m: usize,
    pub n: usize,
    pub points: usize,
    pub grid_a: f64,
    pub grid_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub provenance: Provenance,
    pub data: DataSummary,
    pub options: TestOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wmw: Option<WmwSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mean_tests: Vec<MeanSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSummary {
    pub provenance: Provenance,
    pub config: RunConfig,
    pub table: PowerTable,
    pub ratios: Vec<RatioRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticSummary {
    pub provenance: Provenance,
    pub config: RunConfig,
    pub curves: Vec<AsymptoticPowerCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleSummary {
    pub provenance: Provenance,
    pub options: TestOptions,
    pub fraction: f64,
    pub repeats: usize,
    pub table: PowerTable,
}

pub fn to_json(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_power_csv(out: impl Write, table: &PowerTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["test", "shift", "c", "rejection_rate", "mc_stderr", "rejections", "replicates"])?;
    for r in &table.rows {
        w.write_record([
            r.test.to_string(),
            opt(r.shift),
            opt(r.c),
            r.rejection_rate.to_string(),
            r.mc_stderr.to_string(),
            r.rejections.to_string(),
            r.replicates.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ratio_csv(out: impl Write, rows: &[RatioRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["test", "shift", "c", "rejection_rate", "baseline_rate", "ratio"])?;
    for r in rows {
        w.write_record([
            r.test.to_string(),
            opt(r.shift),
            opt(r.c),
            r.rejection_rate.to_string(),
            r.baseline_rate.to_string(),
            opt(r.ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Long format, one row per `(shift, test, c)`, with the ratio to `baseline`
/// at the same shift and `c` (empty when the baseline is absent or zero).
pub fn write_asymptotic_csv(out: impl Write, curves: &[AsymptoticPowerCurve], baseline: TestId) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["test", "shift", "c", "power", "ratio"])?;
    for curve in curves {
        let base = curves
            .iter()
            .find(|b| b.test == baseline && b.shift_kind == curve.shift_kind);
        for (i, (&c, &p)) in curve.c_values.iter().zip(&curve.powers).enumerate() {
            let ratio = base.map(|b| b.powers[i]).filter(|&b| b > 0.0).map(|b| p / b);
            w.write_record([
                curve.test.to_string(),
                curve.shift_kind.to_string(),
                c.to_string(),
                p.to_string(),
                opt(ratio),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
