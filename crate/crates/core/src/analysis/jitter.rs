//! Two-channel jitter and folded pulse shape.

use serde::{Deserialize, Serialize};

use super::{default_bin_width, fit_gaussian, AnalysisError, GaussianFit, Histogram, FWHM_PER_SIGMA};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterReport {
    pub histogram: Histogram,
    pub gaussian_fit: Option<GaussianFit>,
    /// `2·sqrt(2·ln 2)·σ`; 0 when the differences are degenerate.
    pub fwhm: f64,
    /// Set when the differences fill a single bin and no width can be fit.
    pub degenerate: bool,
    pub samples: usize,
}

pub fn fwhm_jitter(tags_a: &[f64], tags_b: &[f64]) -> Result<JitterReport, AnalysisError> {
    fwhm_jitter_with(tags_a, tags_b, default_bin_width())
}

/// Histogram of `a_i − b_i` and its Gaussian fit.
pub fn fwhm_jitter_with(tags_a: &[f64], tags_b: &[f64], bin_width: f64) -> Result<JitterReport, AnalysisError> {
    if tags_a.len() != tags_b.len() {
        return Err(AnalysisError::LengthMismatch {
            a: tags_a.len(),
            b: tags_b.len(),
        });
    }
    if tags_a.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let diffs: Vec<f64> = tags_a.iter().zip(tags_b).map(|(a, b)| a - b).collect();
    let histogram = Histogram::from_values(&diffs, bin_width)?;
    let gaussian_fit = fit_gaussian(&histogram);
    Ok(JitterReport {
        fwhm: gaussian_fit.as_ref().map_or(0.0, |f| FWHM_PER_SIGMA * f.sigma),
        degenerate: gaussian_fit.is_none(),
        gaussian_fit,
        histogram,
        samples: diffs.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseReport {
    pub histogram: Histogram,
    pub gaussian_fit: Option<GaussianFit>,
    pub fwhm: f64,
    pub degenerate: bool,
    /// Circular mean of the folded phases, in `[0, period)`.
    pub phase_center: f64,
    pub period: f64,
}

pub fn pulse_shape(tags: &[f64], period: f64) -> Result<PulseReport, AnalysisError> {
    pulse_shape_with(tags, period, default_bin_width())
}

/// Folds timestamps modulo `period` around their circular mean so the pulse
/// is never split at the fold boundary, then histograms and fits.
pub fn pulse_shape_with(tags: &[f64], period: f64, bin_width: f64) -> Result<PulseReport, AnalysisError> {
    if !(period.is_finite() && period > 0.0) {
        return Err(AnalysisError::InvalidParameter(format!(
            "period must be positive, got {period}"
        )));
    }
    if tags.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let phases: Vec<f64> = tags.iter().map(|t| t.rem_euclid(period)).collect();
    let (s, c) = phases.iter().fold((0.0, 0.0), |(s, c), p| {
        let a = std::f64::consts::TAU * p / period;
        (s + a.sin(), c + a.cos())
    });
    let center = (s.atan2(c) / std::f64::consts::TAU * period).rem_euclid(period);
    let folded: Vec<f64> = phases
        .iter()
        .map(|p| center + (p - center + 0.5 * period).rem_euclid(period) - 0.5 * period)
        .collect();
    let histogram = Histogram::from_values(&folded, bin_width)?;
    let gaussian_fit = fit_gaussian(&histogram);
    Ok(PulseReport {
        fwhm: gaussian_fit.as_ref().map_or(0.0, |f| FWHM_PER_SIGMA * f.sigma),
        degenerate: gaussian_fit.is_none(),
        gaussian_fit,
        histogram,
        phase_center: center,
        period,
    })
}
