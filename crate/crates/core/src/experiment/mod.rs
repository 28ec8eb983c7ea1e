//! Experiment runner: ties lines, sources, calibration, analysis and the
//! stream service into the scenarios exposed by the command line.
//!
//! Every run is described by an [`ExperimentSpec`]. Source seeds are derived
//! from the spec's master seed; the delay line keeps its own seed because it
//! identifies the simulated device. Outputs carry the spec hash and seed.

mod bench;
mod compare;
mod pipeline;
mod qkd;
mod sweep;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::calib::{CalibError, StrategyRegistry, DEFAULT_WINDOW};
use crate::delayline::{DelayLineError, DelayLineModel, LineConfig, SUPPORTED_RANGE};
use crate::sources::{SourceConfig, SourceError};
use crate::stream::StreamError;

pub use bench::{run_stream_bench, StreamBenchConfig, StreamBenchReport};
pub use compare::{
    fit_channel_noise, run_calib_compare, run_jitter, run_linearity, CalibCompareReport, JitterRun, LinearityRun,
};
pub use pipeline::{acquire, ro_histogram, TdcChannel};
pub use qkd::{run_qkd, QkdConfig, QkdReport};
pub use sweep::{run_tempsweep, SweepResult, SweepRow};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    Config(String),
    #[error("spec parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    DelayLine(#[from] DelayLineError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Runtime(String),
}

impl ExperimentError {
    /// True for problems with the spec itself, as opposed to failures while
    /// running it.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            ExperimentError::Config(_)
                | ExperimentError::Toml(_)
                | ExperimentError::DelayLine(DelayLineError::InvalidProfile(_))
                | ExperimentError::Calib(CalibError::UnknownStrategy(_))
                | ExperimentError::Source(SourceError::InvalidConfig(_) | SourceError::UnknownKind(_))
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    Ascending,
    Descending,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    /// Temperature of the reference (fixed) calibrations.
    pub reference: f64,
    pub order: SweepOrder,
    /// Detections per channel per temperature.
    pub events_per_step: usize,
    /// Steady-calibration window.
    pub window: usize,
    /// Bins averaged for the truncated mean delay.
    pub truncate_bins: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            start: SUPPORTED_RANGE.0,
            stop: SUPPORTED_RANGE.1,
            step: 1.0,
            reference: SUPPORTED_RANGE.0,
            order: SweepOrder::Ascending,
            events_per_step: DEFAULT_WINDOW,
            window: DEFAULT_WINDOW,
            truncate_bins: 120,
        }
    }
}

impl SweepConfig {
    /// Temperatures in processing order.
    pub fn temperatures(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        let mut t: Vec<f64> = (0..n).map(|i| self.start + i as f64 * self.step).collect();
        if self.order == SweepOrder::Descending {
            t.reverse();
        }
        t
    }
}

/// The second timing channel: same profile recipe, different device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SecondChannel {
    pub seed_offset: u64,
    /// Ratio of the second line's temperature coefficient to the first's.
    pub drift_ratio: f64,
}

impl Default for SecondChannel {
    fn default() -> Self {
        Self {
            seed_offset: 1,
            drift_ratio: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub name: String,
    /// Master seed for every random source of the run.
    pub seed: u64,
    pub line: LineConfig,
    pub channel_b: SecondChannel,
    /// Calibration source.
    pub ro: SourceConfig,
    /// Measured signal (laser + single-photon detector).
    pub spd: SourceConfig,
    pub sweep: SweepConfig,
    pub strategies: Vec<String>,
    /// Independent Gaussian noise σ added to each channel, in ps.
    pub channel_noise_ps: f64,
    /// Histogram bin width for jitter fits; half the line's mean resolution
    /// when absent. Bins that coarse alias against the discrete set of
    /// calibrated differences and make the fit jump between temperatures.
    pub bin_width_ps: Option<f64>,
    /// Temperature of the two-channel jitter and linearity runs.
    pub jitter_temperature: f64,
    /// Bubble probability applied to every captured code.
    pub bubble_prob: f64,
    pub qkd: QkdConfig,
    pub stream: StreamBenchConfig,
    pub out_dir: PathBuf,
}

pub const DEFAULT_JITTER_BIN_PS: f64 = 4.0;

/// Spread of the free-running oscillator's edges around the ideal
/// `k/f_RO` grid. Much larger than a bin, so the oscillator's phases are
/// effectively random and each RO table carries its own counting noise.
pub const RO_PHASE_WANDER_PS: f64 = 1000.0;

/// Fitted so the 25 °C two-channel FWHM of the default line is 27.63 ps.
pub const DEFAULT_CHANNEL_NOISE_PS: f64 = 1.96;

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "tdc".into(),
            seed: 2024,
            line: LineConfig::default(),
            channel_b: SecondChannel::default(),
            ro: SourceConfig {
                jitter_sigma: Some(RO_PHASE_WANDER_PS),
                ..SourceConfig::of_kind("ring_oscillator", 0)
            },
            spd: SourceConfig::of_kind("laser_spd", 0),
            sweep: SweepConfig::default(),
            strategies: StrategyRegistry::with_builtin().names().map(String::from).collect(),
            channel_noise_ps: DEFAULT_CHANNEL_NOISE_PS,
            bin_width_ps: Some(DEFAULT_JITTER_BIN_PS),
            jitter_temperature: 25.0,
            bubble_prob: 0.0,
            qkd: QkdConfig::default(),
            stream: StreamBenchConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(s: &str) -> Result<Self, ExperimentError> {
        let spec: Self = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        let s = &self.sweep;
        if !(s.step.is_finite() && s.step > 0.0) {
            return bad(format!("temperature step must be positive, got {}", s.step));
        }
        if !(s.start.is_finite() && s.stop.is_finite() && s.start <= s.stop) {
            return bad(format!("temperature range [{}, {}] is empty", s.start, s.stop));
        }
        if s.events_per_step == 0 || s.window == 0 {
            return bad("events_per_step and window must be positive".into());
        }
        if s.truncate_bins == 0 {
            return bad("truncate_bins must be positive".into());
        }
        if self.strategies.is_empty() {
            return bad("no calibration strategies selected".into());
        }
        let registry = StrategyRegistry::with_builtin();
        for name in &self.strategies {
            if !registry.contains(name) {
                return bad(format!(
                    "unknown strategy {name:?}; expected one of {}",
                    registry.names().collect::<Vec<_>>().join(", ")
                ));
            }
        }
        if !(self.channel_noise_ps.is_finite() && self.channel_noise_ps >= 0.0) {
            return bad("channel_noise_ps must be non-negative".into());
        }
        if let Some(w) = self.bin_width_ps {
            if !(w.is_finite() && w > 0.0) {
                return bad("bin_width_ps must be positive".into());
            }
        }
        if !(self.channel_b.drift_ratio.is_finite() && self.channel_b.drift_ratio > 0.0) {
            return bad("channel_b.drift_ratio must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.bubble_prob) {
            return bad("bubble_prob must lie in [0, 1]".into());
        }
        self.qkd.validate()?;
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the spec's canonical JSON. The
    /// output directory is left out: it does not change any result.
    pub fn spec_hash(&self) -> String {
        let canonical = Self {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("spec serializes");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..8])
    }

    /// Per-purpose seed derived from the master seed.
    pub fn derive_seed(&self, purpose: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(purpose.as_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            experiment: self.name.clone(),
            spec_hash: self.spec_hash(),
            seed: self.seed,
        }
    }

    pub fn line_a(&self) -> Result<DelayLineModel, ExperimentError> {
        Ok(self.line.build()?)
    }

    pub fn line_b(&self) -> Result<DelayLineModel, ExperimentError> {
        let mut cfg = self.line.clone();
        cfg.seed = cfg.seed.wrapping_add(self.channel_b.seed_offset);
        cfg.profile.temp_coeff *= self.channel_b.drift_ratio;
        Ok(cfg.build()?)
    }

    fn source(&self, base: &SourceConfig, purpose: &str) -> SourceConfig {
        SourceConfig {
            seed: self.derive_seed(purpose),
            sampling_frequency: self.line.profile.f_s,
            ..base.clone()
        }
    }

    pub fn bin_width(&self, line: &DelayLineModel) -> f64 {
        self.bin_width_ps
            .unwrap_or(line.coarse_period() / self.line.profile.target_nc as f64 / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub experiment: String,
    pub spec_hash: String,
    pub seed: u64,
}
