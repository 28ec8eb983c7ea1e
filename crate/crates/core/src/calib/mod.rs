//! Code-density calibration.
//!
//! A histogram of fine bins hit by a temporally uniform source gives each
//! bin's share of the coarse period. Calibrated centers are
//! `t^(c)_i = ½δt_{N_c} + ½δt_i + Σ_{j<i} δt_j`, with the ½δt_{N_c} offset
//! applied to every bin so that the mean spacing of consecutive centers is
//! exactly `τ/N_c`.
//!
//! Bin `i` is stored at `counts[i - 1]`; bin 0 is the bare coarse edge.

mod fenwick;
mod steady;
pub mod strategy;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delayline::RawTag;
use crate::stats::normal_upper_quantile;

pub use fenwick::Fenwick;
pub use steady::{steady_init, SeedStatus, SteadyState, MAX_BINS};
pub use strategy::{CalibrationStrategy, StrategyContext, StrategyRegistry};

/// Window capacity used by the steady calibration.
pub const DEFAULT_WINDOW: usize = 1 << 17;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("histogram has no counts")]
    EmptyHistogram,
    #[error("fine index {fine} beyond table range N_c = {n_c}")]
    FineOutOfRange { fine: usize, n_c: usize },
    #[error("bin index must be in 1..={max}, got {got}")]
    InvalidBin { got: usize, max: usize },
    #[error("{name} must lie in (0, 1), got {value}")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("n_c must be at least 1")]
    ZeroBins,
    #[error("capacity must be at least 1")]
    ZeroCapacity,
    #[error("coarse period must be positive, got {0}")]
    InvalidPeriod(f64),
    #[error("unknown calibration strategy '{0}'")]
    UnknownStrategy(String),
    #[error("table CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("table JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed table: {0}")]
    Malformed(String),
}

/// Immutable calibration snapshot built from a bin histogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr")]
pub struct CalibrationTable {
    counts: Vec<u64>,
    n_c: usize,
    coarse_period: f64,
    bin_widths: Vec<f64>,
    cumulative: Vec<f64>,
    centers: Vec<f64>,
    tau_res: f64,
    empty_bins: Vec<usize>,
}

#[derive(Deserialize)]
struct TableRepr {
    counts: Vec<u64>,
    coarse_period: f64,
}

impl TryFrom<TableRepr> for CalibrationTable {
    type Error = CalibError;

    fn try_from(r: TableRepr) -> Result<Self, CalibError> {
        build_table(&r.counts, r.coarse_period)
    }
}

/// Builds a table from per-bin counts, trimming trailing empty bins.
pub fn build_table(counts: &[u64], coarse_period: f64) -> Result<CalibrationTable, CalibError> {
    if !(coarse_period.is_finite() && coarse_period > 0.0) {
        return Err(CalibError::InvalidPeriod(coarse_period));
    }
    let n_c = counts.iter().rposition(|&c| c > 0).ok_or(CalibError::EmptyHistogram)? + 1;
    let counts = counts[..n_c].to_vec();
    let total: u64 = counts.iter().sum();
    let scale = coarse_period / total as f64;

    let mut bin_widths = Vec::with_capacity(n_c);
    let mut cumulative = Vec::with_capacity(n_c + 1);
    let mut centers = Vec::with_capacity(n_c + 1);
    let mut empty_bins = Vec::new();
    cumulative.push(0.0);
    centers.push(0.0);
    let last = counts[n_c - 1] as f64;
    let mut prefix = 0u64;
    for (k, &w) in counts.iter().enumerate() {
        let i = k + 1;
        bin_widths.push(w as f64 * scale);
        let center = if w == 0 && i > 1 {
            empty_bins.push(i);
            centers[i - 1]
        } else {
            if w == 0 {
                empty_bins.push(i);
            }
            center_from_sums(prefix, w, last, scale)
        };
        centers.push(center);
        prefix += w;
        cumulative.push(prefix as f64 * scale);
    }
    cumulative[n_c] = coarse_period;
    Ok(CalibrationTable {
        counts,
        n_c,
        coarse_period,
        bin_widths,
        cumulative,
        centers,
        tau_res: coarse_period / n_c as f64,
        empty_bins,
    })
}

/// Center of a bin from integer sums, shared by the static and the steady
/// paths so both round identically.
#[inline]
pub(crate) fn center_from_sums(prefix_before: u64, w: u64, w_last: f64, scale: f64) -> f64 {
    (prefix_before as f64 + 0.5 * w as f64 + 0.5 * w_last) * scale
}

impl CalibrationTable {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn coarse_period(&self) -> f64 {
        self.coarse_period
    }

    /// `δt_i` for bins `1..=N_c`.
    pub fn bin_widths(&self) -> &[f64] {
        &self.bin_widths
    }

    /// `t_0..=t_{N_c}`.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// `t^(c)_0..=t^(c)_{N_c}`.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn tau_res(&self) -> f64 {
        self.tau_res
    }

    /// Interior bins that recorded no events.
    pub fn empty_bins(&self) -> &[usize] {
        &self.empty_bins
    }

    pub fn total_events(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn center(&self, fine: usize) -> Result<f64, CalibError> {
        self.centers
            .get(fine)
            .copied()
            .ok_or(CalibError::FineOutOfRange { fine, n_c: self.n_c })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CalibError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Flat CSV: `bin,count,width_ps,cumulative_ps,center_ps`, bins `1..=N_c`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CalibError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin", "count", "width_ps", "cumulative_ps", "center_ps"])?;
        for i in 1..=self.n_c {
            out.write_record([
                i.to_string(),
                self.counts[i - 1].to_string(),
                self.bin_widths[i - 1].to_string(),
                self.cumulative[i].to_string(),
                self.centers[i].to_string(),
            ])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory CSV");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    /// Reads the flat CSV back; the coarse period is the last cumulative time.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, CalibError> {
        let mut reader = csv::Reader::from_reader(r);
        let mut counts = Vec::new();
        let mut period = None;
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let field = |k: usize| {
                record
                    .get(k)
                    .ok_or_else(|| CalibError::Malformed(format!("row {row} has too few columns")))
            };
            let bin: usize = field(0)?
                .parse()
                .map_err(|e| CalibError::Malformed(format!("row {row} bin: {e}")))?;
            if bin != row + 1 {
                return Err(CalibError::Malformed(format!("row {row} has bin {bin}")));
            }
            counts.push(
                field(1)?
                    .parse()
                    .map_err(|e| CalibError::Malformed(format!("row {row} count: {e}")))?,
            );
            period = Some(
                field(3)?
                    .parse::<f64>()
                    .map_err(|e| CalibError::Malformed(format!("row {row} cumulative: {e}")))?,
            );
        }
        let period = period.ok_or(CalibError::EmptyHistogram)?;
        build_table(&counts, period)
    }
}

/// `timestamp = coarse·τ − t^(c)_fine`, in picoseconds.
///
/// The coarse term is exact up to 2^53 ps of elapsed time; beyond that the
/// result carries the usual double-precision rounding.
pub fn calibrate_tag(table: &CalibrationTable, tag: &RawTag) -> Result<f64, CalibError> {
    let center = table.center(tag.fine as usize)?;
    Ok(tag.coarse as f64 * table.coarse_period - center)
}

/// `Σ (p_i − q_i)² / (p_i + q_i)` over normalized histograms, shorter one
/// zero-padded.
pub fn chi_square(hist_a: &[u64], hist_b: &[u64]) -> Result<f64, CalibError> {
    let ta: u64 = hist_a.iter().sum();
    let tb: u64 = hist_b.iter().sum();
    if ta == 0 || tb == 0 {
        return Err(CalibError::EmptyHistogram);
    }
    let n = hist_a.len().max(hist_b.len());
    let at = |h: &[u64], i: usize| h.get(i).copied().unwrap_or(0) as f64;
    Ok((0..n)
        .map(|i| {
            let p = at(hist_a, i) / ta as f64;
            let q = at(hist_b, i) / tb as f64;
            if p + q > 0.0 {
                (p - q) * (p - q) / (p + q)
            } else {
                0.0
            }
        })
        .sum())
}

/// Minimum code-density run length: `ceil((z_{α/2}/β)² · n_c)`.
pub fn min_events(alpha: f64, beta: f64, n_c: usize) -> Result<u64, CalibError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CalibError::ProbabilityOutOfRange {
            name: "alpha",
            value: alpha,
        });
    }
    min_events_with_z(normal_upper_quantile(alpha / 2.0), beta, n_c)
}

/// As [`min_events`] with the quantile supplied directly.
pub fn min_events_with_z(z: f64, beta: f64, n_c: usize) -> Result<u64, CalibError> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(CalibError::ProbabilityOutOfRange {
            name: "beta",
            value: beta,
        });
    }
    if n_c == 0 {
        return Err(CalibError::ZeroBins);
    }
    let r = z / beta;
    Ok((r * r * n_c as f64).ceil() as u64)
}

/// Smallest power of two not below `n`.
pub fn round_up_pow2(n: u64) -> u64 {
    n.max(1).next_power_of_two()
}

/// Histogram of bin indices `1..`, as `counts[i - 1]`. Index 0 is ignored.
pub fn histogram<I: IntoIterator<Item = usize>>(bins: I) -> Vec<u64> {
    let mut counts = Vec::new();
    for b in bins {
        if b == 0 {
            continue;
        }
        if counts.len() < b {
            counts.resize(b, 0);
        }
        counts[b - 1] += 1;
    }
    counts
}
