//! Performance metrics: DNL/tDNL, truncated mean delay, FWHM jitter, pulse
//! shape and time-gated QBER.

mod fit;
mod jitter;
mod qber;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::CalibrationTable;
use crate::delayline::{coarse_period_ps, DEFAULT_SAMPLING_HZ, DEFAULT_TARGET_NC};

pub use fit::{fit_gaussian, GaussianFit, Histogram, FWHM_PER_SIGMA};
pub use jitter::{fwhm_jitter, fwhm_jitter_with, pulse_shape, pulse_shape_with, JitterReport, PulseReport};
pub use qber::{qber, Basis, BasisMap, Gate, QberReport, TaggedEvent};

/// Default histogram bin width for jitter and pulse fits: half the nominal
/// resolution of the default line.
pub fn default_bin_width() -> f64 {
    coarse_period_ps(DEFAULT_SAMPLING_HZ) / DEFAULT_TARGET_NC as f64 / 2.0
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("empty input")]
    Empty,
    #[error("sequences differ in length: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("values span [{lo}, {hi}], which needs {bins} bins")]
    RangeTooWide { lo: f64, hi: f64, bins: u64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no basis-matched events inside the gate")]
    EmptyGate,
    #[error("truncation length {k} exceeds {bins} bins")]
    TruncationTooLong { k: usize, bins: usize },
    #[error("report CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// `DNL_i = (w_i − ⟨w⟩)/⟨w⟩` over bins `1..=N_c`.
pub fn dnl(counts: &[u64]) -> Result<Vec<f64>, AnalysisError> {
    let n_c = counts.iter().rposition(|&c| c > 0).ok_or(AnalysisError::Empty)? + 1;
    let counts = &counts[..n_c];
    let mean = counts.iter().sum::<u64>() as f64 / n_c as f64;
    Ok(counts.iter().map(|&w| (w as f64 - mean) / mean).collect())
}

/// `tDNL_i = (δt^(c)_i − τ_res)/τ_res` with `δt^(c)_i = t^(c)_i − t^(c)_{i−1}`.
pub fn tdnl(table: &CalibrationTable) -> Vec<f64> {
    let tau_res = table.tau_res();
    table
        .centers()
        .windows(2)
        .map(|c| (c[1] - c[0] - tau_res) / tau_res)
        .collect()
}

/// Mean of the first `k` bin widths.
pub fn truncated_mean_delay(widths: &[f64], k: usize) -> Result<f64, AnalysisError> {
    if k == 0 || k > widths.len() {
        return Err(AnalysisError::TruncationTooLong { k, bins: widths.len() });
    }
    Ok(widths[..k].iter().sum::<f64>() / k as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub dnl: Vec<f64>,
    pub tdnl: Vec<f64>,
    pub dnl_range: (f64, f64),
    pub bins_above_one: usize,
    pub tau_res: f64,
}

impl LinearityReport {
    pub fn from_table(table: &CalibrationTable) -> Self {
        let dnl = dnl(table.counts()).expect("tables are never empty");
        let lo = dnl.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = dnl.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            bins_above_one: dnl.iter().filter(|&&d| d > 1.0).count(),
            tdnl: tdnl(table),
            dnl_range: (lo, hi),
            dnl,
            tau_res: table.tau_res(),
        }
    }

    /// CSV `bin,dnl,tdnl`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), AnalysisError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin", "dnl", "tdnl"])?;
        for (i, (d, t)) in self.dnl.iter().zip(&self.tdnl).enumerate() {
            out.write_record([(i + 1).to_string(), d.to_string(), t.to_string()])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
