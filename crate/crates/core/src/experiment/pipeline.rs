//! Arrival time → thermometer code → fine bin → raw tag.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ExperimentError;
use crate::calib::histogram;
use crate::decoder::{bin_index, decode, FineValue};
use crate::delayline::{inject_bubbles, DelayLineModel, LineState, RawTag, ThermometerCode};
use crate::sources::{next_events, SourceConfig};

/// One TDC input frozen at a temperature.
pub struct TdcChannel {
    state: LineState,
    channel: u8,
    bubble_prob: f64,
    rng: ChaCha8Rng,
}

impl TdcChannel {
    pub fn new(line: &DelayLineModel, temperature: f64, channel: u8) -> Result<Self, ExperimentError> {
        Ok(Self {
            state: line.at(temperature)?,
            channel,
            bubble_prob: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    /// Swaps the bits around the transition of each captured code with
    /// probability `p`. The ones-counting decoder makes this invisible in
    /// the tags.
    pub fn with_bubbles(mut self, p: f64, seed: u64) -> Self {
        self.bubble_prob = p;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn state(&self) -> &LineState {
        &self.state
    }

    pub fn n_c(&self) -> usize {
        self.state.n_c()
    }

    pub fn tag(&mut self, arrival_ps: f64) -> RawTag {
        let (coarse, ones) = self.state.capture(arrival_ps);
        let ones = if self.bubble_prob > 0.0 {
            let n = self.state.n_taps();
            let code = inject_bubbles(&ThermometerCode::with_ones(n, ones), self.bubble_prob, &mut self.rng);
            decode(&code, n).expect("code built at line length").index
        } else {
            ones
        };
        RawTag {
            coarse,
            fine: bin_index(FineValue { index: ones }, self.state.leading_zero_taps()) as u16,
            channel: self.channel,
        }
    }
}

pub fn acquire<I: IntoIterator<Item = f64>>(channel: &mut TdcChannel, arrivals: I) -> Vec<RawTag> {
    arrivals.into_iter().map(|t| channel.tag(t)).collect()
}

/// Code-density histogram of `count` events of `source` on `line` at
/// `temperature`.
pub fn ro_histogram(
    line: &DelayLineModel,
    temperature: f64,
    source: &SourceConfig,
    count: usize,
) -> Result<Vec<u64>, ExperimentError> {
    let mut ch = TdcChannel::new(line, temperature, 0)?;
    let events = next_events(source, count)?;
    Ok(histogram(events.iter().map(|e| ch.tag(e.time_ps).fine as usize)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delayline::{LineConfig, ProfileConfig, ProfileShape};

    fn uniform() -> DelayLineModel {
        LineConfig {
            n_taps: 8,
            seed: 1,
            profile: ProfileConfig {
                shape: ProfileShape::Uniform { delay_ps: 10.0 },
                target_nc: 4,
                f_s: 25e9,
                temp_coeff: 0.0,
                ..Default::default()
            },
        }
        .build()
        .unwrap()
    }

    #[test]
    fn tags_follow_the_sampling_rule() {
        let line = uniform();
        let mut ch = TdcChannel::new(&line, 25.0, 3).unwrap();
        // τ = 40 ps; arrival 95 → coarse 3, Δ = 25 → two taps crossed → bin 3.
        assert_eq!(
            ch.tag(95.0),
            RawTag {
                coarse: 3,
                fine: 3,
                channel: 3
            }
        );
        assert_eq!(
            ch.tag(119.5),
            RawTag {
                coarse: 3,
                fine: 1,
                channel: 3
            }
        );
    }

    #[test]
    fn bubbles_do_not_change_tags() {
        let line = uniform();
        let mut clean = TdcChannel::new(&line, 25.0, 0).unwrap();
        let mut bubbly = TdcChannel::new(&line, 25.0, 0).unwrap().with_bubbles(1.0, 9);
        for k in 0..400 {
            let t = 1000.0 + k as f64 * 0.37;
            assert_eq!(clean.tag(t), bubbly.tag(t));
        }
    }

    #[test]
    fn ro_histogram_covers_the_line() {
        let line = uniform();
        let cfg = SourceConfig {
            sampling_frequency: 25e9,
            ..SourceConfig::of_kind("ring_oscillator", 3)
        };
        let h = ro_histogram(&line, 25.0, &cfg, 4000).unwrap();
        assert_eq!(h.len(), 4);
        assert_eq!(h.iter().sum::<u64>(), 4000);
        assert!(h.iter().all(|&c| (c as f64 - 1000.0).abs() < 50.0), "{h:?}");
    }
}
