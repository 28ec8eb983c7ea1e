//! Arrival-time generators driving the simulated TDC.
//!
//! Every source is a pulse train `k·T + phase` (k ≥ 1) with optional
//! per-pulse thinning, Gaussian jitter and a Poisson background, emitted in
//! strictly increasing time order. Jittered candidates are held in a small
//! heap until no later candidate can precede them, so large jitter never
//! reorders the output.
//!
//! Sources are registered by kind name: `ring_oscillator`, `laser_spd`,
//! `square_wave`, `qkd_pattern`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delayline::{coarse_period_ps, COARSE_MODULUS, DEFAULT_SAMPLING_HZ};

pub const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;
/// Default repetition rate of the QKD pattern source.
pub const QKD_RATE_HZ: f64 = 50e6;
/// Default laser repetition rate; far from any small-denominator ratio to
/// the default sampling clock.
pub const LASER_RATE_HZ: f64 = 41e6;
pub const SPD_JITTER_PS: f64 = 100.0;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("unknown source kind '{0}'")]
    UnknownKind(String),
    #[error("invalid source config: {0}")]
    InvalidConfig(String),
    #[error("invalid pattern symbol '{0}'")]
    BadSymbol(char),
    #[error("source ended after {produced} of {requested} events")]
    Exhausted { produced: usize, requested: usize },
    #[error("event CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Polarization symbol carried by QKD pulses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Symbol {
    H,
    V,
    D,
    A,
}

impl Symbol {
    pub const ALL: [Symbol; 4] = [Symbol::H, Symbol::V, Symbol::D, Symbol::A];

    pub fn from_char(c: char) -> Result<Self, SourceError> {
        match c.to_ascii_uppercase() {
            'H' => Ok(Symbol::H),
            'V' => Ok(Symbol::V),
            'D' => Ok(Symbol::D),
            'A' => Ok(Symbol::A),
            other => Err(SourceError::BadSymbol(other)),
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Symbol::H => 'H',
            Symbol::V => 'V',
            Symbol::D => 'D',
            Symbol::A => 'A',
        }
    }

    /// Index used as detector channel id (H=0, V=1, D=2, A=3).
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

/// Parses `"HVDD"` or `"H,V,D,D"`.
pub fn parse_pattern(s: &str) -> Result<Vec<Symbol>, SourceError> {
    s.chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(Symbol::from_char)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time_ps: f64,
    pub label: Option<Symbol>,
    /// True for background (non-pulse) events.
    pub background: bool,
    pub channel: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    pub kind: String,
    /// Pulse rate in Hz; the kind's default when absent.
    pub frequency: Option<f64>,
    /// Per-event Gaussian jitter σ in ps; the kind's default when absent.
    pub jitter_sigma: Option<f64>,
    /// Per-pulse detection probability; the kind's default when absent.
    pub detection_prob: Option<f64>,
    pub background_rate: f64,
    pub pattern: String,
    pub seed: u64,
    pub phase_ps: f64,
    /// Detector dead time in ps; 0 disables it.
    pub dead_time_ps: f64,
    /// Sampling clock the source is measured against (for defaults and the
    /// commensurability check).
    pub sampling_frequency: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            kind: "ring_oscillator".into(),
            frequency: None,
            jitter_sigma: None,
            detection_prob: None,
            background_rate: 0.0,
            pattern: "HVDD".into(),
            seed: 1,
            phase_ps: 0.0,
            dead_time_ps: 0.0,
            sampling_frequency: DEFAULT_SAMPLING_HZ,
        }
    }
}

impl SourceConfig {
    pub fn of_kind(kind: &str, seed: u64) -> Self {
        Self {
            kind: kind.into(),
            seed,
            ..Self::default()
        }
    }

    pub fn resolved_frequency(&self) -> f64 {
        self.frequency.unwrap_or(match self.kind.as_str() {
            "ring_oscillator" => self.sampling_frequency / GOLDEN_RATIO,
            "qkd_pattern" => QKD_RATE_HZ,
            "laser_spd" => LASER_RATE_HZ,
            _ => 1e6,
        })
    }

    pub fn resolved_jitter(&self) -> f64 {
        self.jitter_sigma.unwrap_or(match self.kind.as_str() {
            "laser_spd" | "qkd_pattern" => SPD_JITTER_PS,
            _ => 0.0,
        })
    }

    pub fn resolved_detection_prob(&self) -> f64 {
        self.detection_prob.unwrap_or(match self.kind.as_str() {
            "laser_spd" | "qkd_pattern" => 0.1,
            _ => 1.0,
        })
    }

    fn validate(&self) -> Result<(), SourceError> {
        let bad = |m: String| Err(SourceError::InvalidConfig(m));
        let f = self.resolved_frequency();
        if !(f.is_finite() && f > 0.0) {
            return bad(format!("frequency must be positive, got {f}"));
        }
        let p = self.resolved_detection_prob();
        if !(0.0..=1.0).contains(&p) {
            return bad(format!("detection_prob {p} outside [0, 1]"));
        }
        let j = self.resolved_jitter();
        if !(j.is_finite() && j >= 0.0) {
            return bad(format!("jitter_sigma must be non-negative, got {j}"));
        }
        if !(self.background_rate.is_finite() && self.background_rate >= 0.0) {
            return bad(format!(
                "background_rate must be non-negative, got {}",
                self.background_rate
            ));
        }
        if p == 0.0 && self.background_rate == 0.0 {
            return bad("detection_prob 0 without background produces no events".into());
        }
        if !(self.dead_time_ps.is_finite() && self.dead_time_ps >= 0.0) {
            return bad("dead_time_ps must be non-negative".into());
        }
        if !(self.phase_ps.is_finite() && self.phase_ps >= 0.0) {
            return bad("phase_ps must be non-negative".into());
        }
        if !(self.sampling_frequency.is_finite() && self.sampling_frequency > 0.0) {
            return bad("sampling_frequency must be positive".into());
        }
        Ok(())
    }

    /// Warning text when the pulse period is a small-denominator rational
    /// multiple of the sampling period and the jitter is too small to fill
    /// the resulting comb of phases.
    pub fn uniformity_warning(&self) -> Option<String> {
        let tau = coarse_period_ps(self.sampling_frequency);
        let period = 1e12 / self.resolved_frequency();
        let (p, q) = small_rational(period / tau, 1000, 1e-9)?;
        let sigma = self.resolved_jitter();
        (sigma < tau / q as f64).then(|| {
            format!(
                "{} period is {p}/{q} of the sampling period: phases collapse onto {q} values \
                 (jitter {sigma} ps < {:.1} ps spacing), code-density histogram will not be uniform",
                self.kind,
                tau / q as f64
            )
        })
    }
}

/// Best rational approximation `p/q` of `x` with `q ≤ max_q` that matches
/// within `rel_tol`, via continued fractions.
pub fn small_rational(x: f64, max_q: u64, rel_tol: f64) -> Option<(u64, u64)> {
    if !(x.is_finite() && x > 0.0) {
        return None;
    }
    let (mut h0, mut h1) = (0u64, 1u64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a > 1e15 {
            break;
        }
        let a = a as u64;
        let h2 = a.checked_mul(h1)?.checked_add(h0)?;
        let k2 = a.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_q {
            return None;
        }
        if ((h2 as f64 / k2 as f64) - x).abs() <= rel_tol * x {
            return Some((h2, k2));
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = r - a as f64;
        if frac <= 0.0 {
            break;
        }
        r = 1.0 / frac;
    }
    None
}

pub trait EventSource: Send {
    fn kind(&self) -> &'static str;
    fn next_event(&mut self) -> Option<Event>;
}

pub type SourceFactory = fn(&SourceConfig) -> Result<Box<dyn EventSource>, SourceError>;

pub struct SourceRegistry {
    factories: BTreeMap<&'static str, SourceFactory>,
}

impl SourceRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtin() -> Self {
        let mut r = Self::empty();
        r.register("ring_oscillator", |c| {
            Ok(Box::new(PulsedSource::new("ring_oscillator", c, false)?))
        });
        r.register("square_wave", |c| {
            Ok(Box::new(PulsedSource::new("square_wave", c, false)?))
        });
        r.register("laser_spd", |c| Ok(Box::new(PulsedSource::new("laser_spd", c, false)?)));
        r.register("qkd_pattern", |c| {
            Ok(Box::new(PulsedSource::new("qkd_pattern", c, true)?))
        });
        r
    }

    pub fn register(&mut self, kind: &'static str, factory: SourceFactory) {
        self.factories.insert(kind, factory);
    }

    pub fn kinds(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn build(&self, cfg: &SourceConfig) -> Result<Box<dyn EventSource>, SourceError> {
        let factory = self
            .factories
            .get(cfg.kind.as_str())
            .ok_or_else(|| SourceError::UnknownKind(cfg.kind.clone()))?;
        if let Some(w) = cfg.uniformity_warning() {
            log::debug!("{w}");
        }
        factory(cfg)
    }
}

impl Default for SourceRegistry {
    fn default() -> Self {
        Self::with_builtin()
    }
}

/// First `count` events of the configured source.
pub fn next_events(cfg: &SourceConfig, count: usize) -> Result<Vec<Event>, SourceError> {
    let mut source = SourceRegistry::with_builtin().build(cfg)?;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        match source.next_event() {
            Some(e) => out.push(e),
            None => {
                return Err(SourceError::Exhausted {
                    produced: out.len(),
                    requested: count,
                })
            }
        }
    }
    Ok(out)
}

/// Copies every event into two channels with independent Gaussian
/// perturbations. Pairs stay index-aligned; channel ids are 0 and 1.
pub fn split_two_channels(events: &[Event], sigma: f64, seed: u64) -> (Vec<Event>, Vec<Event>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Vec::with_capacity(events.len());
    let mut b = Vec::with_capacity(events.len());
    for e in events {
        let (na, nb): (f64, f64) = if sigma > 0.0 {
            (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        a.push(Event {
            time_ps: e.time_ps + sigma * na,
            channel: 0,
            ..*e
        });
        b.push(Event {
            time_ps: e.time_ps + sigma * nb,
            channel: 1,
            ..*e
        });
    }
    (a, b)
}

/// Histogram of arrival phases modulo `period` in `bins` equal bins.
pub fn phase_histogram(events: &[Event], period: f64, bins: usize) -> Vec<u64> {
    let mut h = vec![0u64; bins];
    for e in events {
        let phase = e.time_ps.rem_euclid(period) / period;
        h[((phase * bins as f64) as usize).min(bins - 1)] += 1;
    }
    h
}

/// CSV with columns `time_ps,label`.
pub fn write_events_csv<W: Write>(events: &[Event], w: W) -> Result<(), SourceError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time_ps", "label"])?;
    for e in events {
        let label = e.label.map(|s| s.as_char().to_string()).unwrap_or_default();
        out.write_record([e.time_ps.to_string(), label])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Clone, Copy)]
struct Pending {
    time: f64,
    label: Option<Symbol>,
    background: bool,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.time.total_cmp(&other.time) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Reversed so the std max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time)
    }
}

/// Pulse train with thinning, jitter, background and dead time.
pub struct PulsedSource {
    kind: &'static str,
    period: f64,
    phase: f64,
    jitter: f64,
    guard: f64,
    thinning: Option<Geometric>,
    pattern: Vec<Symbol>,
    background: Option<Exp<f64>>,
    next_pulse: u64,
    next_background: f64,
    dead_time: f64,
    last: f64,
    limit: f64,
    heap: BinaryHeap<Pending>,
    rng: ChaCha8Rng,
}

impl PulsedSource {
    pub fn new(kind: &'static str, cfg: &SourceConfig, labelled: bool) -> Result<Self, SourceError> {
        cfg.validate()?;
        let p = cfg.resolved_detection_prob();
        let thinning = if p < 1.0 && p > 0.0 {
            Some(Geometric::new(p).map_err(|e| SourceError::InvalidConfig(e.to_string()))?)
        } else {
            None
        };
        let pattern = if labelled {
            let pat = parse_pattern(&cfg.pattern)?;
            if pat.is_empty() {
                return Err(SourceError::InvalidConfig("empty pattern".into()));
            }
            pat
        } else {
            Vec::new()
        };
        let background = if cfg.background_rate > 0.0 {
            Some(Exp::new(cfg.background_rate * 1e-12).map_err(|e| SourceError::InvalidConfig(e.to_string()))?)
        } else {
            None
        };
        let period = 1e12 / cfg.resolved_frequency();
        let jitter = cfg.resolved_jitter();
        let mut s = Self {
            kind,
            period,
            phase: cfg.phase_ps,
            jitter,
            guard: 10.0 * jitter,
            thinning,
            pattern,
            background,
            next_pulse: 0,
            next_background: f64::INFINITY,
            dead_time: cfg.dead_time_ps,
            last: f64::NEG_INFINITY,
            limit: COARSE_MODULUS as f64 * coarse_period_ps(cfg.sampling_frequency),
            heap: BinaryHeap::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        };
        s.next_pulse = if p > 0.0 { s.next_detected(0) } else { u64::MAX };
        if let Some(bg) = s.background {
            s.next_background = bg.sample(&mut s.rng);
        }
        Ok(s)
    }

    fn next_detected(&mut self, from: u64) -> u64 {
        let gap = match &self.thinning {
            Some(g) => g.sample(&mut self.rng),
            None => 0,
        };
        from.saturating_add(1).saturating_add(gap)
    }

    fn pulse_time(&self, k: u64) -> f64 {
        if k == u64::MAX {
            f64::INFINITY
        } else {
            k as f64 * self.period + self.phase
        }
    }

    fn label_of_slot(&self, k: u64) -> Option<Symbol> {
        if self.pattern.is_empty() {
            None
        } else {
            Some(self.pattern[((k.max(1) - 1) % self.pattern.len() as u64) as usize])
        }
    }

    fn frontier(&self) -> f64 {
        self.pulse_time(self.next_pulse).min(self.next_background)
    }

    fn generate(&mut self) {
        let pulse_t = self.pulse_time(self.next_pulse);
        if pulse_t <= self.next_background {
            let k = self.next_pulse;
            let noise: f64 = if self.jitter > 0.0 {
                StandardNormal.sample(&mut self.rng)
            } else {
                0.0
            };
            self.heap.push(Pending {
                time: pulse_t + self.jitter * noise,
                label: self.label_of_slot(k),
                background: false,
            });
            self.next_pulse = self.next_detected(k);
        } else {
            let t = self.next_background;
            let slot = ((t - self.phase) / self.period).round().max(1.0) as u64;
            self.heap.push(Pending {
                time: t,
                label: self.label_of_slot(slot),
                background: true,
            });
            let bg = self.background.expect("background scheduled");
            self.next_background += bg.sample(&mut self.rng);
        }
    }
}

impl EventSource for PulsedSource {
    fn kind(&self) -> &'static str {
        self.kind
    }

    fn next_event(&mut self) -> Option<Event> {
        loop {
            while self.heap.peek().is_none_or(|p| p.time > self.frontier() - self.guard) {
                if !self.frontier().is_finite() {
                    break;
                }
                self.generate();
            }
            let p = self.heap.pop()?;
            if p.time >= self.limit {
                return None;
            }
            if p.time < 0.0 {
                continue;
            }
            if self.dead_time > 0.0 && p.time < self.last + self.dead_time {
                continue;
            }
            let time = if p.time <= self.last {
                self.last.next_up()
            } else {
                p.time
            };
            self.last = time;
            return Some(Event {
                time_ps: time,
                label: p.label,
                background: p.background,
                channel: 0,
            });
        }
    }
}

impl Iterator for PulsedSource {
    type Item = Event;

    fn next(&mut self) -> Option<Event> {
        self.next_event()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn times(events: &[Event]) -> Vec<f64> {
        events.iter().map(|e| e.time_ps).collect()
    }

    #[test]
    fn square_wave_train() {
        let cfg = SourceConfig {
            kind: "square_wave".into(),
            frequency: Some(1e6),
            jitter_sigma: Some(0.0),
            ..SourceConfig::default()
        };
        assert_eq!(times(&next_events(&cfg, 3).unwrap()), vec![1e6, 2e6, 3e6]);
    }

    #[test]
    fn qkd_labels_cycle() {
        let cfg = SourceConfig {
            kind: "qkd_pattern".into(),
            detection_prob: Some(1.0),
            ..SourceConfig::default()
        };
        let labels: String = next_events(&cfg, 8)
            .unwrap()
            .iter()
            .map(|e| e.label.unwrap().as_char())
            .collect();
        assert_eq!(labels, "HVDDHVDD");
    }

    #[test]
    fn unknown_kind_and_bad_config() {
        assert!(matches!(
            next_events(&SourceConfig::of_kind("sawtooth", 1), 1),
            Err(SourceError::UnknownKind(_))
        ));
        let cfg = SourceConfig {
            kind: "laser_spd".into(),
            detection_prob: Some(0.0),
            ..SourceConfig::default()
        };
        assert!(matches!(next_events(&cfg, 1), Err(SourceError::InvalidConfig(_))));
        assert!(matches!(parse_pattern("HVX"), Err(SourceError::BadSymbol('X'))));
    }

    #[test]
    fn large_jitter_stays_sorted() {
        let cfg = SourceConfig {
            kind: "laser_spd".into(),
            frequency: Some(1e9),
            jitter_sigma: Some(5000.0),
            detection_prob: Some(0.7),
            background_rate: 1e8,
            seed: 3,
            ..SourceConfig::default()
        };
        let ev = next_events(&cfg, 20_000).unwrap();
        assert!(ev.windows(2).all(|w| w[0].time_ps < w[1].time_ps));
        assert!(ev.iter().any(|e| e.background));
    }

    #[test]
    fn split_without_jitter_copies() {
        let cfg = SourceConfig::of_kind("ring_oscillator", 2);
        let ev = next_events(&cfg, 10).unwrap();
        let (a, b) = split_two_channels(&ev, 0.0, 9);
        assert_eq!(times(&a), times(&ev));
        assert_eq!(times(&b), times(&ev));
        assert!(a.iter().all(|e| e.channel == 0) && b.iter().all(|e| e.channel == 1));
    }

    #[test]
    fn commensurability_detection() {
        assert_eq!(small_rational(2.0, 1000, 1e-9), Some((2, 1)));
        assert_eq!(small_rational(8.25, 1000, 1e-9), Some((33, 4)));
        assert_eq!(small_rational(GOLDEN_RATIO, 1000, 1e-9), None);
        let commensurate = SourceConfig {
            kind: "laser_spd".into(),
            frequency: Some(DEFAULT_SAMPLING_HZ / 2.0),
            jitter_sigma: Some(0.0),
            ..SourceConfig::default()
        };
        assert!(commensurate.uniformity_warning().is_some());
        assert!(SourceConfig::of_kind("ring_oscillator", 1)
            .uniformity_warning()
            .is_none());
        assert!(SourceConfig::of_kind("laser_spd", 1).uniformity_warning().is_none());
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SourceConfig::of_kind("laser_spd", 11);
        assert_eq!(
            times(&next_events(&cfg, 500).unwrap()),
            times(&next_events(&cfg, 500).unwrap())
        );
    }
}
