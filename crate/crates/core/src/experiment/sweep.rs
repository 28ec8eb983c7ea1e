//! Temperature sweep comparing calibration strategies.
//!
//! The same detections (laser + SPD, split into two noisy channels) are
//! replayed at every temperature, so differences between steps come from the
//! line alone. The per-step RO acquisition is fresh at each temperature.
//! Each strategy gets one instance per channel that lives for the whole
//! sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::{acquire, ro_histogram, TdcChannel};
use super::{ExperimentError, ExperimentSpec, Provenance};
use crate::analysis::{fwhm_jitter_with, truncated_mean_delay};
use crate::calib::{CalibrationStrategy, StrategyContext, StrategyRegistry};
use crate::delayline::{DelayLineModel, RawTag};
use crate::sources::{next_events, split_two_channels};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub temperature: f64,
    pub strategy: String,
    pub fwhm_ps: f64,
    /// Mean width of the first `truncate_bins` bins of channel A's table.
    pub mean_truncated_delay_ps: f64,
    /// Bins in channel A's table at the end of the step.
    pub n_c: usize,
    /// Event pairs that entered the jitter histogram.
    pub pairs: usize,
    /// Pairs dropped because a fine value fell outside the table.
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub provenance: Provenance,
    pub rows: Vec<SweepRow>,
    /// `(T, N_c of line A, N_c of line B)` per step.
    pub line_n_c: Vec<(f64, usize, usize)>,
}

impl SweepResult {
    /// `(T, fwhm)` for one strategy, in processing order.
    pub fn series(&self, strategy: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.strategy == strategy)
            .map(|r| (r.temperature, r.fwhm_ps))
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), ExperimentError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "temperature_c",
            "strategy",
            "fwhm_ps",
            "mean_truncated_delay_ps",
            "n_c",
            "pairs",
            "excluded",
            "spec_hash",
            "seed",
        ])?;
        for r in &self.rows {
            out.write_record([
                r.temperature.to_string(),
                r.strategy.clone(),
                r.fwhm_ps.to_string(),
                r.mean_truncated_delay_ps.to_string(),
                r.n_c.to_string(),
                r.pairs.to_string(),
                r.excluded.to_string(),
                self.provenance.spec_hash.clone(),
                self.provenance.seed.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Step {
    temperature: f64,
    tags: [Vec<RawTag>; 2],
    ro: [Vec<u64>; 2],
    n_c: [usize; 2],
}

struct Setup {
    lines: [DelayLineModel; 2],
    arrivals: [Vec<f64>; 2],
}

impl Setup {
    fn new(spec: &ExperimentSpec) -> Result<Self, ExperimentError> {
        let lines = [spec.line_a()?, spec.line_b()?];
        let spd = spec.source(&spec.spd, "spd");
        if let Some(w) = spd.uniformity_warning() {
            log::warn!("{w}");
        }
        let events = next_events(&spd, spec.sweep.events_per_step)?;
        let (a, b) = split_two_channels(&events, spec.channel_noise_ps, spec.derive_seed("split"));
        Ok(Self {
            lines,
            arrivals: [
                a.iter().map(|e| e.time_ps).collect(),
                b.iter().map(|e| e.time_ps).collect(),
            ],
        })
    }

    fn step(&self, spec: &ExperimentSpec, temperature: f64) -> Result<Step, ExperimentError> {
        let mut tags: [Vec<RawTag>; 2] = Default::default();
        let mut ro: [Vec<u64>; 2] = Default::default();
        let mut n_c = [0; 2];
        for ch in 0..2 {
            let mut tdc = TdcChannel::new(&self.lines[ch], temperature, ch as u8)?;
            if spec.bubble_prob > 0.0 {
                tdc = tdc.with_bubbles(
                    spec.bubble_prob,
                    spec.derive_seed(&format!("bubbles-{ch}-{temperature:.3}")),
                );
            }
            n_c[ch] = tdc.n_c();
            tags[ch] = acquire(&mut tdc, self.arrivals[ch].iter().copied());
            ro[ch] = ro_histogram(
                &self.lines[ch],
                temperature,
                &ro_source(spec, ch, temperature),
                spec.sweep.events_per_step,
            )?;
        }
        Ok(Step {
            temperature,
            tags,
            ro,
            n_c,
        })
    }
}

/// RO acquisitions are seeded by channel and temperature, so the reference
/// acquisition and the per-step one at the reference temperature coincide.
fn ro_source(spec: &ExperimentSpec, ch: usize, temperature: f64) -> crate::sources::SourceConfig {
    spec.source(&spec.ro, &format!("ro-{ch}-{temperature:.3}"))
}

pub fn run_tempsweep(spec: &ExperimentSpec) -> Result<SweepResult, ExperimentError> {
    spec.validate()?;
    let setup = Setup::new(spec)?;
    let reference = setup.step(spec, spec.sweep.reference)?;
    let registry = StrategyRegistry::with_builtin();
    let bin_width = spec.bin_width(&setup.lines[0]);

    let mut strategies: Vec<[Box<dyn CalibrationStrategy>; 2]> = Vec::new();
    for name in &spec.strategies {
        let build = |ch: usize| {
            let spd: Vec<u16> = reference.tags[ch].iter().map(|t| t.fine).collect();
            registry.build(
                name,
                &StrategyContext {
                    coarse_period: setup.lines[ch].coarse_period(),
                    reference_ro: &reference.ro[ch],
                    reference_spd: &spd,
                    window: spec.sweep.window,
                },
            )
        };
        strategies.push([build(0)?, build(1)?]);
    }

    let temps = spec.sweep.temperatures();
    let chunk = rayon::current_num_threads().max(1);
    let mut rows = Vec::with_capacity(temps.len() * strategies.len());
    let mut line_n_c = Vec::with_capacity(temps.len());
    for group in temps.chunks(chunk) {
        let steps: Vec<Step> = group
            .par_iter()
            .map(|&t| setup.step(spec, t))
            .collect::<Result<_, _>>()?;
        for step in &steps {
            line_n_c.push((step.temperature, step.n_c[0], step.n_c[1]));
            for (name, pair) in spec.strategies.iter().zip(strategies.iter_mut()) {
                let row = run_step(spec, name, pair, step, bin_width)?;
                log::debug!(
                    "{:>5.1} °C {:<13} fwhm {:.3} ps, n_c {}",
                    row.temperature,
                    row.strategy,
                    row.fwhm_ps,
                    row.n_c
                );
                rows.push(row);
            }
        }
    }
    Ok(SweepResult {
        provenance: spec.provenance(),
        rows,
        line_n_c,
    })
}

fn run_step(
    spec: &ExperimentSpec,
    name: &str,
    pair: &mut [Box<dyn CalibrationStrategy>; 2],
    step: &Step,
    bin_width: f64,
) -> Result<SweepRow, ExperimentError> {
    let [sa, sb] = pair;
    sa.begin_step(&step.ro[0])?;
    sb.begin_step(&step.ro[1])?;
    let n = step.tags[0].len();
    let mut ta = Vec::with_capacity(n);
    let mut tb = Vec::with_capacity(n);
    for (a, b) in step.tags[0].iter().zip(&step.tags[1]) {
        if let (Some(x), Some(y)) = (sa.calibrate(a), sb.calibrate(b)) {
            ta.push(x);
            tb.push(y);
        }
    }
    let report = fwhm_jitter_with(&ta, &tb, bin_width)?;
    let table = sa.table()?;
    let k = spec.sweep.truncate_bins.min(table.n_c());
    Ok(SweepRow {
        temperature: step.temperature,
        strategy: name.to_string(),
        fwhm_ps: report.fwhm,
        mean_truncated_delay_ps: truncated_mean_delay(table.bin_widths(), k)?,
        n_c: table.n_c(),
        pairs: ta.len(),
        excluded: n - ta.len(),
    })
}
