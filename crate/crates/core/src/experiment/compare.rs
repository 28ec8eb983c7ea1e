//! Calibration-source comparison, two-channel jitter and linearity runs.

use serde::{Deserialize, Serialize};

use super::pipeline::{acquire, ro_histogram, TdcChannel};
use super::{ExperimentError, ExperimentSpec, Provenance};
use crate::analysis::{fwhm_jitter_with, JitterReport, LinearityReport};
use crate::calib::{build_table, calibrate_tag, chi_square, CalibrationTable};
use crate::sources::{next_events, split_two_channels};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibCompareReport {
    pub provenance: Provenance,
    pub temperature: f64,
    pub events: usize,
    pub chi_square: f64,
    pub ro_counts: Vec<u64>,
    pub spd_counts: Vec<u64>,
    /// Commensurability warning for the laser configuration, if any.
    pub warning: Option<String>,
}

impl CalibCompareReport {
    /// CSV `bin,ro_count,spd_count,spec_hash,seed`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), ExperimentError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin", "ro_count", "spd_count", "spec_hash", "seed"])?;
        let n = self.ro_counts.len().max(self.spd_counts.len());
        for i in 0..n {
            out.write_record([
                (i + 1).to_string(),
                self.ro_counts.get(i).copied().unwrap_or(0).to_string(),
                self.spd_counts.get(i).copied().unwrap_or(0).to_string(),
                self.provenance.spec_hash.clone(),
                self.provenance.seed.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// RO and laser/SPD code-density histograms of `sweep.window` events each
/// on line A at the jitter temperature, and their χ².
pub fn run_calib_compare(spec: &ExperimentSpec) -> Result<CalibCompareReport, ExperimentError> {
    spec.validate()?;
    let line = spec.line_a()?;
    let t = spec.jitter_temperature;
    let n = spec.sweep.window;
    let ro_counts = ro_histogram(&line, t, &spec.source(&spec.ro, "compare-ro"), n)?;
    let spd = spec.source(&spec.spd, "compare-spd");
    let warning = spd.uniformity_warning();
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let spd_counts = ro_histogram(&line, t, &spd, n)?;
    Ok(CalibCompareReport {
        provenance: spec.provenance(),
        temperature: t,
        events: n,
        chi_square: chi_square(&ro_counts, &spd_counts)?,
        ro_counts,
        spd_counts,
        warning,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterRun {
    pub provenance: Provenance,
    pub temperature: f64,
    pub channel_noise_ps: f64,
    pub report: JitterReport,
    pub excluded: usize,
}

/// Two-channel jitter at the jitter temperature, each channel calibrated
/// with its own RO table acquired at that temperature.
pub fn run_jitter(spec: &ExperimentSpec) -> Result<JitterRun, ExperimentError> {
    spec.validate()?;
    let t = spec.jitter_temperature;
    let lines = [spec.line_a()?, spec.line_b()?];
    let events = next_events(&spec.source(&spec.spd, "spd"), spec.sweep.events_per_step)?;
    let (a, b) = split_two_channels(&events, spec.channel_noise_ps, spec.derive_seed("split"));
    let mut stamps: [Vec<Option<f64>>; 2] = Default::default();
    for (ch, arrivals) in [a, b].iter().enumerate() {
        let table = build_table(
            &ro_histogram(
                &lines[ch],
                t,
                &spec.source(&spec.ro, &format!("ro-{ch}-{t:.3}")),
                spec.sweep.window,
            )?,
            lines[ch].coarse_period(),
        )?;
        let mut tdc = TdcChannel::new(&lines[ch], t, ch as u8)?;
        stamps[ch] = acquire(&mut tdc, arrivals.iter().map(|e| e.time_ps))
            .iter()
            .map(|tag| calibrate_tag(&table, tag).ok())
            .collect();
    }
    let (ta, tb): (Vec<f64>, Vec<f64>) = stamps[0]
        .iter()
        .zip(&stamps[1])
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .unzip();
    let excluded = stamps[0].len() - ta.len();
    Ok(JitterRun {
        provenance: spec.provenance(),
        temperature: t,
        channel_noise_ps: spec.channel_noise_ps,
        report: fwhm_jitter_with(&ta, &tb, spec.bin_width(&lines[0]))?,
        excluded,
    })
}

/// Channel noise σ for which [`run_jitter`] reports `target_fwhm`, by
/// bisection on `[0, 4·target]`. The FWHM grows with σ but is only piecewise
/// smooth, so the result is good to about `tol`.
pub fn fit_channel_noise(spec: &ExperimentSpec, target_fwhm: f64, tol: f64) -> Result<f64, ExperimentError> {
    let fwhm = |sigma: f64| -> Result<f64, ExperimentError> {
        let s = ExperimentSpec {
            channel_noise_ps: sigma,
            ..spec.clone()
        };
        Ok(run_jitter(&s)?.report.fwhm)
    };
    let (mut lo, mut hi) = (0.0, 4.0 * target_fwhm);
    if fwhm(lo)? > target_fwhm {
        return Err(ExperimentError::Runtime(format!(
            "quantization alone exceeds the target FWHM of {target_fwhm} ps"
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if fwhm(mid)? < target_fwhm {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearityRun {
    pub provenance: Provenance,
    pub temperature: f64,
    pub table: CalibrationTable,
    pub report: LinearityReport,
}

/// RO code-density table of line A at the jitter temperature and its
/// DNL/tDNL.
pub fn run_linearity(spec: &ExperimentSpec) -> Result<LinearityRun, ExperimentError> {
    spec.validate()?;
    let line = spec.line_a()?;
    let t = spec.jitter_temperature;
    let counts = ro_histogram(
        &line,
        t,
        &spec.source(&spec.ro, &format!("ro-0-{t:.3}")),
        spec.sweep.window,
    )?;
    let table = build_table(&counts, line.coarse_period())?;
    Ok(LinearityRun {
        provenance: spec.provenance(),
        temperature: t,
        report: LinearityReport::from_table(&table),
        table,
    })
}
