//! Error metrics in mm and comparison tables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::Period;
use crate::error::{Error, Result};

fn check_pair(pred: &[f64], obs: &[f64]) -> Result<()> {
    if pred.len() != obs.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![obs.len()],
            actual: vec![pred.len()],
        });
    }
    if obs.is_empty() {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pair(pred, obs)?;
    let sse: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum();
    Ok((sse / obs.len() as f64).sqrt())
}

/// Nash–Sutcliffe efficiency. Undefined (an error) for constant observations.
pub fn nse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pair(pred, obs)?;
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let spread: f64 = obs.iter().map(|o| (o - mean) * (o - mean)).sum();
    if !(spread > 0.0) {
        return Err(Error::invalid("NSE is undefined for constant observations"));
    }
    let sse: f64 = pred.iter().zip(obs).map(|(p, o)| (o - p) * (o - p)).sum();
    Ok(1.0 - sse / spread)
}

/// Linear-interpolation quantile at fraction `q ∈ [0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty series"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakError {
    pub rmse: f64,
    pub threshold: f64,
    pub samples: usize,
}

/// RMSE over the samples whose observation is at or above the `q` quantile.
pub fn rmse99(pred: &[f64], obs: &[f64], q: f64) -> Result<PeakError> {
    check_pair(pred, obs)?;
    let threshold = percentile(obs, q)?;
    let (p, o): (Vec<f64>, Vec<f64>) = pred
        .iter()
        .zip(obs)
        .filter(|(_, &o)| o >= threshold)
        .map(|(&p, &o)| (p, o))
        .unzip();
    if o.is_empty() {
        return Err(Error::invalid(format!("no observation reaches the threshold {threshold}")));
    }
    Ok(PeakError {
        rmse: rmse(&p, &o)?,
        threshold,
        samples: o.len(),
    })
}

pub const PEAK_QUANTILE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodMetrics {
    pub rmse: f64,
    pub nse: f64,
    pub rmse99: f64,
    pub p99_threshold: f64,
    pub n_samples: usize,
    pub n_peak_samples: usize,
}

impl PeriodMetrics {
    /// All metrics for one period. With `clamp`, negative predictions count as 0.
    pub fn compute(pred: &[f64], obs: &[f64], clamp: bool) -> Result<Self> {
        let clamped: Vec<f64>;
        let pred = if clamp {
            clamped = pred.iter().map(|p| p.max(0.0)).collect();
            &clamped
        } else {
            pred
        };
        let peak = rmse99(pred, obs, PEAK_QUANTILE)?;
        Ok(PeriodMetrics {
            rmse: rmse(pred, obs)?,
            nse: nse(pred, obs)?,
            rmse99: peak.rmse,
            p99_threshold: peak.threshold,
            n_samples: obs.len(),
            n_peak_samples: peak.samples,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub train: PeriodMetrics,
    pub validation: PeriodMetrics,
    pub test: PeriodMetrics,
}

impl EvalReport {
    pub fn period(&self, period: Period) -> &PeriodMetrics {
        match period {
            Period::Train => &self.train,
            Period::Validation => &self.validation,
            Period::Test => &self.test,
        }
    }

    /// RMSE, NSE, RMSE99 for train, validation, test.
    pub fn cells(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (i, p) in Period::ALL.iter().enumerate() {
            let m = self.period(*p);
            out[3 * i..3 * i + 3].copy_from_slice(&[m.rmse, m.nse, m.rmse99]);
        }
        out
    }
}

/// Rounds to three significant figures and prints without exponent.
pub fn sig3(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00".into();
    }
    let magnitude = |v: f64| v.abs().log10().floor() as i32;
    let factor = 10f64.powi(2 - magnitude(x));
    let rounded = (x * factor).round() / factor;
    let decimals = (2 - magnitude(rounded)).max(0) as usize;
    format!("{rounded:.decimals$}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "md" | "markdown" => Ok(TableFormat::Markdown),
            other => Err(Error::invalid(format!("unknown table format `{other}`"))),
        }
    }
}

impl fmt::Display for TableFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TableFormat::Csv => "csv",
            TableFormat::Markdown => "markdown",
        })
    }
}

const METRIC_NAMES: [&str; 3] = ["rmse", "nse", "rmse99"];

/// One row per case, columns period × metric, numbers at three significant
/// figures.
pub fn render_comparison(reports: &[(String, EvalReport)], format: TableFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::invalid("nothing to compare"));
    }
    let mut header = vec!["case".to_string()];
    for p in Period::ALL {
        header.extend(METRIC_NAMES.iter().map(|m| format!("{p}_{m}")));
    }
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(label, r)| {
            std::iter::once(label.clone())
                .chain(r.cells().iter().map(|&v| sig3(v)))
                .collect()
        })
        .collect();
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| Error::invalid(format!("csv rendering failed: {e}"));
            w.write_record(&header).map_err(io)?;
            for row in &rows {
                w.write_record(row).map_err(io)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        TableFormat::Markdown => {
            let mut out = String::from("| Case |");
            for p in ["Training", "Validation", "Test"] {
                for m in ["RMSE", "NSE", "RMSE99"] {
                    out.push_str(&format!(" {p} {m} |"));
                }
            }
            out.push('\n');
            out.push_str(&"|---".repeat(10));
            out.push_str("|\n");
            for row in rows {
                let label = row[0].replace('|', "\\|");
                out.push_str(&format!("| {label} | {} |\n", row[1..].join(" | ")));
            }
            Ok(out)
        }
    }
}
