//! HVDD scenario: labelled pulses at the QKD rate, routed to four detectors,
//! time-tagged and calibrated, then time-gated for the QBER.
//!
//! A signal detection lands on its label's detector, or with probability
//! `routing_error` on the other detector of the same basis. Background
//! clicks pick one of the four detectors uniformly and carry the label of
//! the pulse slot they fall in. All detectors share one calibrated line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pipeline::{ro_histogram, TdcChannel};
use super::{ExperimentError, ExperimentSpec, Provenance};
use crate::analysis::{pulse_shape_with, qber, BasisMap, Gate, PulseReport, QberReport, TaggedEvent};
use crate::calib::{build_table, calibrate_tag};
use crate::sources::{next_events, SourceConfig, QKD_RATE_HZ, SPD_JITTER_PS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QkdConfig {
    pub frequency: f64,
    pub pattern: String,
    pub detection_prob: f64,
    pub detector_jitter_ps: f64,
    pub background_rate: f64,
    pub routing_error: f64,
    /// Detections generated (signal and background together).
    pub events: usize,
    pub gate_width_ps: f64,
    /// Extra gate widths evaluated on the same data.
    pub gate_scan_ps: Vec<f64>,
}

impl Default for QkdConfig {
    fn default() -> Self {
        Self {
            frequency: QKD_RATE_HZ,
            pattern: "HVDD".into(),
            detection_prob: 0.1,
            detector_jitter_ps: SPD_JITTER_PS,
            background_rate: 0.0,
            routing_error: 0.022,
            events: 1 << 20,
            gate_width_ps: 1000.0,
            gate_scan_ps: vec![500.0, 1000.0, 2000.0, 5000.0, 10_000.0, 20_000.0],
        }
    }
}

impl QkdConfig {
    pub(super) fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(format!("qkd: {m}")));
        if !(0.0..=1.0).contains(&self.routing_error) {
            return bad("routing_error must lie in [0, 1]");
        }
        if !(self.frequency.is_finite() && self.frequency > 0.0) {
            return bad("frequency must be positive");
        }
        let period = 1e12 / self.frequency;
        if !(self.gate_width_ps > 0.0 && self.gate_width_ps <= period) {
            return bad("gate width must lie in (0, period]");
        }
        if self.gate_scan_ps.iter().any(|&w| !(w > 0.0 && w <= period)) {
            return bad("scan gate widths must lie in (0, period]");
        }
        if self.events == 0 {
            return bad("events must be positive");
        }
        Ok(())
    }

    pub fn period_ps(&self) -> f64 {
        1e12 / self.frequency
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatePoint {
    pub width_ps: f64,
    pub qber: f64,
    pub gated: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QkdReport {
    pub provenance: Provenance,
    pub period_ps: f64,
    pub gate: Gate,
    pub qber: QberReport,
    pub pulse: PulseReport,
    pub scan: Vec<GatePoint>,
    pub events: usize,
}

impl QkdReport {
    /// CSV `gate_width_ps,qber,gated,spec_hash,seed`.
    pub fn write_scan_csv<W: std::io::Write>(&self, w: W) -> Result<(), ExperimentError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["gate_width_ps", "qber", "gated", "spec_hash", "seed"])?;
        for p in &self.scan {
            out.write_record([
                p.width_ps.to_string(),
                p.qber.to_string(),
                p.gated.to_string(),
                self.provenance.spec_hash.clone(),
                self.provenance.seed.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn run_qkd(spec: &ExperimentSpec) -> Result<QkdReport, ExperimentError> {
    spec.validate()?;
    let q = &spec.qkd;
    let line = spec.line_a()?;
    let t = spec.jitter_temperature;
    let table = build_table(
        &ro_histogram(
            &line,
            t,
            &spec.source(&spec.ro, &format!("ro-0-{t:.3}")),
            spec.sweep.window,
        )?,
        line.coarse_period(),
    )?;
    let source = SourceConfig {
        kind: "qkd_pattern".into(),
        frequency: Some(q.frequency),
        jitter_sigma: Some(q.detector_jitter_ps),
        detection_prob: Some(q.detection_prob),
        background_rate: q.background_rate,
        pattern: q.pattern.clone(),
        ..spec.source(&spec.spd, "qkd")
    };
    let events = next_events(&source, q.events)?;
    let map = BasisMap::default();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.derive_seed("routing"));
    let mut tdcs = (0..4u8)
        .map(|d| TdcChannel::new(&line, t, d))
        .collect::<Result<Vec<_>, _>>()?;
    let mut tagged = Vec::with_capacity(events.len());
    for e in &events {
        let label = e.label.expect("pattern source labels every event");
        let detected = if e.background {
            rng.random_range(0..4u8)
        } else {
            let expected = map.labels[&label].1;
            if rng.random_bool(q.routing_error) {
                expected ^ 1
            } else {
                expected
            }
        };
        let tag = tdcs[detected as usize].tag(e.time_ps);
        if let Ok(time_ps) = calibrate_tag(&table, &tag) {
            tagged.push(TaggedEvent {
                time_ps,
                detected,
                label,
            });
        }
    }
    let period = q.period_ps();
    let signal: Vec<f64> = tagged.iter().map(|e| e.time_ps).collect();
    let pulse = pulse_shape_with(&signal, period, spec.bin_width(&line))?;
    let center = pulse
        .gaussian_fit
        .as_ref()
        .map_or(pulse.phase_center, |f| f.mean.rem_euclid(period));
    let gate = Gate {
        center,
        width: q.gate_width_ps,
    };
    let report = qber(&tagged, gate, period, &map)?;
    let mut scan = Vec::with_capacity(q.gate_scan_ps.len());
    for &w in &q.gate_scan_ps {
        let r = qber(&tagged, Gate { center, width: w }, period, &map)?;
        scan.push(GatePoint {
            width_ps: w,
            qber: r.qber,
            gated: r.gated,
        });
    }
    Ok(QkdReport {
        provenance: spec.provenance(),
        period_ps: period,
        gate,
        qber: report,
        pulse,
        scan,
        events: tagged.len(),
    })
}
