//! Tapped delay line model.
//!
//! The chain of `n_taps` delay elements is sampled at every edge of the
//! sampling clock. An event arriving at `t` is captured by edge
//! `floor(t/τ) + 1` after propagating `Δ = coarse·τ − t` into the chain, and
//! the captured state is a thermometer code with one `1` per tap whose
//! cumulative delay does not exceed `Δ`.
//!
//! Per-tap delays follow a linear thermal model around `t_ref`:
//! `δ_k(T) = base_k · (1 + temp_coeff · g_k · (t_ref − T))`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SAMPLING_HZ: f64 = 412.5e6;
pub const DEFAULT_TAPS: usize = 144;
pub const DEFAULT_TARGET_NC: usize = 132;
pub const DEFAULT_T_REF: f64 = 25.0;
pub const DEFAULT_TEMP_COEFF: f64 = 5.25e-4;
pub const DEFAULT_SEED: u64 = 7;
/// Where the coarse period falls inside the last bin at `t_ref`, as a
/// fraction of that bin. Just past the bin edge, so cooling loses bins
/// about as fast as heating gains them.
pub const SPAN_ANCHOR: f64 = 0.1;

/// Temperatures over which the model invariants are guaranteed.
pub const SUPPORTED_RANGE: (f64, f64) = (5.0, 80.0);
/// Temperatures accepted at all by [`DelayLineModel::effective_delays`].
pub const SANITY_RANGE: (f64, f64) = (-40.0, 120.0);

pub const COARSE_BITS: u32 = 48;
pub const COARSE_MODULUS: u64 = 1 << COARSE_BITS;
pub const COARSE_MASK: u64 = COARSE_MODULUS - 1;

/// Sampling clock period in picoseconds.
pub fn coarse_period_ps(f_s: f64) -> f64 {
    1e12 / f_s
}

#[derive(Debug, Error)]
pub enum DelayLineError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("target N_c {target} exceeds n_taps {n_taps}")]
    TargetExceedsTaps { target: usize, n_taps: usize },
    #[error("temperature {0} °C outside the sanity range [-40, 120] °C")]
    TemperatureOutOfRange(f64),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Captured state of the chain at one clock edge. Bit 0 is the first tap.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ThermometerCode {
    words: Vec<u64>,
    len: usize,
}

impl ThermometerCode {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    /// Clean code with the first `ones` bits set.
    pub fn with_ones(len: usize, ones: usize) -> Self {
        assert!(ones <= len, "ones ({ones}) exceeds code length ({len})");
        let mut code = Self::zeros(len);
        let full = ones / 64;
        for w in &mut code.words[..full] {
            *w = u64::MAX;
        }
        let rem = ones % 64;
        if rem > 0 {
            code.words[full] = (1u64 << rem) - 1;
        }
        code
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut code = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            code.set(i, b);
        }
        code
    }

    /// Parses a string of `0`/`1` characters, first tap first.
    pub fn parse(s: &str) -> Option<Self> {
        let bits: Option<Vec<bool>> = s
            .chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect();
        bits.map(|b| Self::from_bits(&b))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    /// Backing words, little-endian bit order; bits past `len` are zero.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// True for a clean code: ones followed by zeros.
    pub fn is_monotone(&self) -> bool {
        let ones = self.words.iter().map(|w| w.count_ones() as usize).sum();
        *self == Self::with_ones(self.len, ones)
    }

    /// Index `i` of the first `1 → 0` step (bit `i` set, bit `i+1` clear).
    pub fn transition(&self) -> Option<usize> {
        (0..self.len.saturating_sub(1)).find(|&i| self.get(i) && !self.get(i + 1))
    }
}

impl fmt::Display for ThermometerCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for ThermometerCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ThermometerCode({self})")
    }
}

/// Raw TDC output before calibration.
///
/// `fine` is a bin index counted from the first tap with non-zero delay
/// (bin 1); `fine == 0` denotes the bare coarse edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawTag {
    pub coarse: u64,
    pub fine: u16,
    pub channel: u8,
}

/// Swaps the pair straddling the first `1 → 0` step with probability `p_bubble`.
pub fn inject_bubbles<R: Rng + ?Sized>(code: &ThermometerCode, p_bubble: f64, rng: &mut R) -> ThermometerCode {
    let p = p_bubble.clamp(0.0, 1.0);
    if p > 0.0 && rng.random_bool(p) {
        force_bubble(code)
    } else {
        code.clone()
    }
}

/// Unconditional version of [`inject_bubbles`]. Codes without a `1 → 0`
/// step (all ones, all zeros) are returned unchanged.
pub fn force_bubble(code: &ThermometerCode) -> ThermometerCode {
    let mut out = code.clone();
    if let Some(i) = code.transition() {
        out.set(i, false);
        out.set(i + 1, true);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureShape {
    /// Taps per carry group; the first slot of each group may be large.
    pub group_size: usize,
    pub large_prob: f64,
    pub large_median_ps: f64,
    pub large_dispersion: f64,
    pub medium_median_ps: f64,
    pub medium_dispersion: f64,
    /// Probability that a non-leading slot is a near-zero tap.
    pub tiny_prob: f64,
    pub tiny_median_ps: f64,
    pub tiny_dispersion: f64,
}

impl Default for MixtureShape {
    fn default() -> Self {
        Self {
            group_size: 4,
            large_prob: 0.7,
            large_median_ps: 42.0,
            large_dispersion: 0.2,
            medium_median_ps: 14.0,
            medium_dispersion: 0.2,
            tiny_prob: 0.2,
            tiny_median_ps: 2.0,
            tiny_dispersion: 0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileShape {
    /// Identical taps, taken as given (no rescaling).
    Uniform { delay_ps: f64 },
    /// Explicit per-tap delays, taken as given.
    Explicit { delays_ps: Vec<f64> },
    /// Random per-group mixture, rescaled so `target_nc` bins cover τ.
    Mixture(MixtureShape),
}

impl Default for ProfileShape {
    fn default() -> Self {
        ProfileShape::Mixture(MixtureShape::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradientSpec {
    #[default]
    Uniform,
    Explicit {
        values: Vec<f64>,
    },
    /// `g_k = max(0, 1 + dispersion · N(0,1))`, drawn from the line seed.
    Random {
        dispersion: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub shape: ProfileShape,
    pub target_nc: usize,
    pub f_s: f64,
    pub t_ref: f64,
    pub temp_coeff: f64,
    pub gradient: GradientSpec,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            shape: ProfileShape::default(),
            target_nc: DEFAULT_TARGET_NC,
            f_s: DEFAULT_SAMPLING_HZ,
            t_ref: DEFAULT_T_REF,
            temp_coeff: DEFAULT_TEMP_COEFF,
            gradient: GradientSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineConfig {
    pub n_taps: usize,
    pub seed: u64,
    pub profile: ProfileConfig,
}

impl Default for LineConfig {
    fn default() -> Self {
        Self {
            n_taps: DEFAULT_TAPS,
            seed: DEFAULT_SEED,
            profile: ProfileConfig::default(),
        }
    }
}

impl LineConfig {
    pub fn build(&self) -> Result<DelayLineModel, DelayLineError> {
        make_delay_line(self.n_taps, self.seed, &self.profile)
    }
}

/// Builds a delay line from a profile. Deterministic in `seed`.
pub fn make_delay_line(n_taps: usize, seed: u64, profile: &ProfileConfig) -> Result<DelayLineModel, DelayLineError> {
    if n_taps < 4 {
        return Err(DelayLineError::InvalidProfile(format!(
            "n_taps must be at least 4, got {n_taps}"
        )));
    }
    if profile.target_nc == 0 {
        return Err(DelayLineError::InvalidProfile("target_nc must be positive".into()));
    }
    if profile.target_nc > n_taps {
        return Err(DelayLineError::TargetExceedsTaps {
            target: profile.target_nc,
            n_taps,
        });
    }
    if !(profile.f_s.is_finite() && profile.f_s > 0.0) {
        return Err(DelayLineError::InvalidProfile(format!(
            "f_s must be positive, got {}",
            profile.f_s
        )));
    }
    if !profile.temp_coeff.is_finite() || !profile.t_ref.is_finite() {
        return Err(DelayLineError::InvalidProfile(
            "temp_coeff and t_ref must be finite".into(),
        ));
    }
    let tau = coarse_period_ps(profile.f_s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let base = match &profile.shape {
        ProfileShape::Uniform { delay_ps } => {
            if !(delay_ps.is_finite() && *delay_ps > 0.0) {
                return Err(DelayLineError::InvalidProfile(format!(
                    "uniform delay must be positive, got {delay_ps}"
                )));
            }
            vec![*delay_ps; n_taps]
        }
        ProfileShape::Explicit { delays_ps } => {
            if delays_ps.len() != n_taps {
                return Err(DelayLineError::InvalidProfile(format!(
                    "explicit profile has {} delays, expected {n_taps}",
                    delays_ps.len()
                )));
            }
            delays_ps.clone()
        }
        ProfileShape::Mixture(m) => {
            let mut d = mixture_delays(n_taps, m, &mut rng)?;
            let target = profile.target_nc;
            let span: f64 = d[..target - 1].iter().sum::<f64>() + SPAN_ANCHOR * d[target - 1];
            let scale = tau / span;
            d.iter_mut().for_each(|x| *x *= scale);
            d
        }
    };

    let gradient = match &profile.gradient {
        GradientSpec::Uniform => None,
        GradientSpec::Explicit { values } => Some(values.clone()),
        GradientSpec::Random { dispersion } => {
            if !(dispersion.is_finite() && *dispersion >= 0.0) {
                return Err(DelayLineError::InvalidProfile(format!(
                    "gradient dispersion must be non-negative, got {dispersion}"
                )));
            }
            let mut grng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            Some(
                (0..n_taps)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut grng);
                        (1.0 + dispersion * z).max(0.0)
                    })
                    .collect(),
            )
        }
    };

    let model = DelayLineModel::new(base, profile.t_ref, profile.temp_coeff, gradient, profile.f_s)?;
    if !model.covers_supported_range() {
        let msg = format!("chain does not cover the coarse period over {:?} °C", SUPPORTED_RANGE);
        if matches!(profile.shape, ProfileShape::Mixture(_)) {
            return Err(DelayLineError::InvalidProfile(msg));
        }
        log::warn!("{msg}; captures past the last tap saturate");
    }
    Ok(model)
}

fn mixture_delays(n_taps: usize, m: &MixtureShape, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, DelayLineError> {
    let positive = [m.large_median_ps, m.medium_median_ps, m.tiny_median_ps];
    if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(DelayLineError::InvalidProfile(
            "mixture medians must be positive".into(),
        ));
    }
    let disp = [m.large_dispersion, m.medium_dispersion, m.tiny_dispersion];
    if disp.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(DelayLineError::InvalidProfile(
            "mixture dispersions must be non-negative".into(),
        ));
    }
    for p in [m.large_prob, m.tiny_prob] {
        if !(0.0..=1.0).contains(&p) {
            return Err(DelayLineError::InvalidProfile(format!(
                "mixture probability {p} outside [0, 1]"
            )));
        }
    }
    if m.group_size == 0 {
        return Err(DelayLineError::InvalidProfile("group_size must be positive".into()));
    }
    let dist = |median: f64, sigma: f64| {
        LogNormal::new(median.ln(), sigma).map_err(|e| DelayLineError::InvalidProfile(format!("log-normal: {e}")))
    };
    let large = dist(m.large_median_ps, m.large_dispersion)?;
    let medium = dist(m.medium_median_ps, m.medium_dispersion)?;
    let tiny = dist(m.tiny_median_ps, m.tiny_dispersion)?;
    Ok((0..n_taps)
        .map(|k| {
            let d = if k % m.group_size == 0 {
                if rng.random_bool(m.large_prob) {
                    &large
                } else {
                    &medium
                }
            } else if rng.random_bool(m.tiny_prob) {
                &tiny
            } else {
                &medium
            };
            d.sample(rng)
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    base_delays: Vec<f64>,
    n_taps: usize,
    t_ref: f64,
    temp_coeff: f64,
    #[serde(default)]
    per_tap_gradient: Option<Vec<f64>>,
    f_s: f64,
    coarse_period: f64,
}

/// Ground truth of the simulated chain. Immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct DelayLineModel {
    base_delays: Vec<f64>,
    t_ref: f64,
    temp_coeff: f64,
    per_tap_gradient: Option<Vec<f64>>,
    f_s: f64,
}

impl TryFrom<ModelRepr> for DelayLineModel {
    type Error = DelayLineError;

    fn try_from(r: ModelRepr) -> Result<Self, Self::Error> {
        if r.n_taps != r.base_delays.len() {
            return Err(DelayLineError::InvalidModel(format!(
                "n_taps {} does not match {} base delays",
                r.n_taps,
                r.base_delays.len()
            )));
        }
        let model = Self::new(r.base_delays, r.t_ref, r.temp_coeff, r.per_tap_gradient, r.f_s)?;
        if (model.coarse_period() - r.coarse_period).abs() > 1e-9 * model.coarse_period() {
            return Err(DelayLineError::InvalidModel(format!(
                "coarse_period {} inconsistent with f_s {}",
                r.coarse_period, r.f_s
            )));
        }
        Ok(model)
    }
}

impl From<DelayLineModel> for ModelRepr {
    fn from(m: DelayLineModel) -> Self {
        ModelRepr {
            n_taps: m.base_delays.len(),
            coarse_period: m.coarse_period(),
            base_delays: m.base_delays,
            t_ref: m.t_ref,
            temp_coeff: m.temp_coeff,
            per_tap_gradient: m.per_tap_gradient,
            f_s: m.f_s,
        }
    }
}

impl DelayLineModel {
    pub fn new(
        base_delays: Vec<f64>,
        t_ref: f64,
        temp_coeff: f64,
        per_tap_gradient: Option<Vec<f64>>,
        f_s: f64,
    ) -> Result<Self, DelayLineError> {
        let bad = |msg: String| Err(DelayLineError::InvalidModel(msg));
        if base_delays.is_empty() {
            return bad("no taps".into());
        }
        if base_delays.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return bad("base delays must be finite and non-negative".into());
        }
        if !base_delays.iter().any(|&d| d > 0.0) {
            return bad("at least one base delay must be positive".into());
        }
        if !(f_s.is_finite() && f_s > 0.0) {
            return bad(format!("f_s must be positive, got {f_s}"));
        }
        if let Some(g) = &per_tap_gradient {
            if g.len() != base_delays.len() {
                return bad(format!(
                    "gradient has {} entries, expected {}",
                    g.len(),
                    base_delays.len()
                ));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return bad("gradient entries must be finite".into());
            }
        }
        let model = Self {
            base_delays,
            t_ref,
            temp_coeff,
            per_tap_gradient,
            f_s,
        };
        // Linear in T, so checking both ends covers the supported range.
        for t in [SUPPORTED_RANGE.0, SUPPORTED_RANGE.1] {
            if model.delays_unchecked(t).iter().any(|&x| x < 0.0) {
                return bad(format!("negative effective delay at {t} °C"));
            }
        }
        if !model.covers_period(model.t_ref) {
            return bad(format!(
                "chain covers {:.3} ps at t_ref, less than the coarse period {:.3} ps",
                model.base_delays.iter().sum::<f64>(),
                model.coarse_period()
            ));
        }
        Ok(model)
    }

    /// Whether the whole chain spans at least one coarse period at `temperature`.
    pub fn covers_period(&self, temperature: f64) -> bool {
        self.delays_unchecked(temperature).iter().sum::<f64>() >= self.coarse_period()
    }

    /// Whether the chain spans one coarse period over the whole supported range.
    pub fn covers_supported_range(&self) -> bool {
        self.covers_period(SUPPORTED_RANGE.0) && self.covers_period(SUPPORTED_RANGE.1)
    }

    pub fn from_json(s: &str) -> Result<Self, DelayLineError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn n_taps(&self) -> usize {
        self.base_delays.len()
    }

    pub fn base_delays(&self) -> &[f64] {
        &self.base_delays
    }

    pub fn t_ref(&self) -> f64 {
        self.t_ref
    }

    pub fn temp_coeff(&self) -> f64 {
        self.temp_coeff
    }

    pub fn per_tap_gradient(&self) -> Option<&[f64]> {
        self.per_tap_gradient.as_deref()
    }

    pub fn f_s(&self) -> f64 {
        self.f_s
    }

    pub fn coarse_period(&self) -> f64 {
        coarse_period_ps(self.f_s)
    }

    /// Taps before the first non-zero base delay; they never define a bin.
    pub fn leading_zero_taps(&self) -> usize {
        self.base_delays.iter().take_while(|&&d| d == 0.0).count()
    }

    /// Copy of this model with a different thermal coefficient.
    pub fn with_temp_coeff(&self, temp_coeff: f64) -> Result<Self, DelayLineError> {
        Self::new(
            self.base_delays.clone(),
            self.t_ref,
            temp_coeff,
            self.per_tap_gradient.clone(),
            self.f_s,
        )
    }

    fn delays_unchecked(&self, temperature: f64) -> Vec<f64> {
        let dt = self.t_ref - temperature;
        self.base_delays
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let g = self.per_tap_gradient.as_ref().map_or(1.0, |g| g[k]);
                b * (1.0 + self.temp_coeff * g * dt)
            })
            .collect()
    }

    pub fn effective_delays(&self, temperature: f64) -> Result<Vec<f64>, DelayLineError> {
        if !(SANITY_RANGE.0..=SANITY_RANGE.1).contains(&temperature) {
            return Err(DelayLineError::TemperatureOutOfRange(temperature));
        }
        let d = self.delays_unchecked(temperature);
        if d.iter().any(|&x| x < 0.0) {
            return Err(DelayLineError::InvalidModel(format!(
                "negative effective delay at {temperature} °C"
            )));
        }
        Ok(d)
    }

    /// Freezes the chain at one temperature for repeated sampling.
    pub fn at(&self, temperature: f64) -> Result<LineState, DelayLineError> {
        let delays = self.effective_delays(temperature)?;
        Ok(LineState::new(&delays, self.coarse_period()))
    }

    pub fn n_c(&self, temperature: f64) -> Result<usize, DelayLineError> {
        Ok(self.at(temperature)?.n_c())
    }

    pub fn sample(&self, arrival_ps: f64, temperature: f64) -> Result<(u64, ThermometerCode), DelayLineError> {
        Ok(self.at(temperature)?.sample(arrival_ps))
    }
}

/// The chain at a fixed temperature, with prefix sums ready for sampling.
#[derive(Clone, Debug)]
pub struct LineState {
    /// `cumulative[k]` is the sum of the first `k` tap delays.
    cumulative: Vec<f64>,
    coarse_period: f64,
    leading_zero: usize,
    n_c: usize,
}

impl LineState {
    pub fn new(delays: &[f64], coarse_period: f64) -> Self {
        let mut cumulative = Vec::with_capacity(delays.len() + 1);
        let mut acc = 0.0;
        cumulative.push(acc);
        for &d in delays {
            acc += d;
            cumulative.push(acc);
        }
        let leading_zero = delays.iter().take_while(|&&d| d == 0.0).count();
        let n_c = cumulative[leading_zero..delays.len()]
            .iter()
            .filter(|&&s| s < coarse_period)
            .count();
        Self {
            cumulative,
            coarse_period,
            leading_zero,
            n_c,
        }
    }

    pub fn n_taps(&self) -> usize {
        self.cumulative.len() - 1
    }

    pub fn coarse_period(&self) -> f64 {
        self.coarse_period
    }

    pub fn leading_zero_taps(&self) -> usize {
        self.leading_zero
    }

    /// Number of bins that can be hit within one coarse period.
    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// True widths of bins `1..=N_c`; the last bin is clipped at τ.
    pub fn bin_widths(&self) -> Vec<f64> {
        (1..=self.n_c)
            .map(|i| {
                let k = self.leading_zero + i;
                self.cumulative[k].min(self.coarse_period) - self.cumulative[k - 1]
            })
            .collect()
    }

    /// Capturing clock edge (wrapped to 48 bits) and number of taps crossed.
    pub fn capture(&self, arrival_ps: f64) -> (u64, usize) {
        let tau = self.coarse_period;
        let mut edges = (arrival_ps / tau).floor().max(0.0);
        let mut delta = (edges + 1.0).mul_add(tau, -arrival_ps);
        // Guard the floor against round-off so that Δ stays in (0, τ].
        if delta <= 0.0 {
            edges += 1.0;
            delta += tau;
        } else if delta > tau {
            edges -= 1.0;
            delta -= tau;
        }
        let delta = delta.clamp(f64::MIN_POSITIVE, tau);
        let coarse = ((edges as u64).wrapping_add(1)) & COARSE_MASK;
        let ones = self.cumulative[1..].partition_point(|&s| s <= delta);
        (coarse, ones)
    }

    pub fn sample(&self, arrival_ps: f64) -> (u64, ThermometerCode) {
        let (coarse, ones) = self.capture(arrival_ps);
        (coarse, ThermometerCode::with_ones(self.n_taps(), ones))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform4() -> DelayLineModel {
        let profile = ProfileConfig {
            shape: ProfileShape::Uniform { delay_ps: 10.0 },
            target_nc: 4,
            f_s: 1e12 / 40.0,
            temp_coeff: 0.001,
            ..ProfileConfig::default()
        };
        make_delay_line(4, 0, &profile).unwrap()
    }

    #[test]
    fn uniform_line_is_taken_as_given() {
        let m = uniform4();
        assert_eq!(m.base_delays(), &[10.0, 10.0, 10.0, 10.0]);
        assert!((m.coarse_period() - 40.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_rule_on_uniform_line() {
        let m = uniform4();
        let (coarse, code) = m.sample(0.0, 25.0).unwrap();
        assert_eq!(coarse, 1);
        assert_eq!(code.to_string(), "1111");
        let (coarse, code) = m.sample(25.0, 25.0).unwrap();
        assert_eq!(coarse, 1);
        assert_eq!(code.to_string(), "1000");
    }

    #[test]
    fn identity_at_reference_and_linear_drift() {
        let m = uniform4();
        assert_eq!(m.effective_delays(25.0).unwrap(), m.base_delays());
        for d in m.effective_delays(35.0).unwrap() {
            assert!((d - 9.9).abs() < 1e-12);
        }
        assert!(matches!(
            m.effective_delays(130.0),
            Err(DelayLineError::TemperatureOutOfRange(_))
        ));
    }

    #[test]
    fn default_line_hits_target_bins() {
        let m = LineConfig::default().build().unwrap();
        assert_eq!(m.n_taps(), 144);
        let state = m.at(25.0).unwrap();
        assert_eq!(state.n_c(), 132);
        let covered: f64 = state.bin_widths().iter().sum();
        assert!((covered - m.coarse_period()).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_profiles() {
        let p = ProfileConfig {
            target_nc: 200,
            ..ProfileConfig::default()
        };
        assert!(matches!(
            make_delay_line(144, 1, &p),
            Err(DelayLineError::TargetExceedsTaps { .. })
        ));
        let p = ProfileConfig {
            shape: ProfileShape::Mixture(MixtureShape {
                large_median_ps: -3.0,
                ..MixtureShape::default()
            }),
            ..ProfileConfig::default()
        };
        assert!(make_delay_line(144, 1, &p).is_err());
    }

    #[test]
    fn leading_zero_taps_do_not_open_bins() {
        let profile = ProfileConfig {
            shape: ProfileShape::Explicit {
                delays_ps: vec![0.0, 0.0, 20.0, 20.0, 20.0],
            },
            f_s: 1e12 / 40.0,
            target_nc: 2,
            temp_coeff: 0.0,
            ..ProfileConfig::default()
        };
        let m = make_delay_line(5, 0, &profile).unwrap();
        let s = m.at(25.0).unwrap();
        assert_eq!(s.leading_zero_taps(), 2);
        assert_eq!(s.n_c(), 2);
        assert_eq!(s.bin_widths(), vec![20.0, 20.0]);
        // Δ = 35 ps: both zero taps plus one real tap crossed.
        assert_eq!(s.capture(5.0).1, 3);
    }

    #[test]
    fn coarse_counter_wraps() {
        let m = LineConfig::default().build().unwrap();
        let tau = m.coarse_period();
        let (coarse, _) = m.sample(COARSE_MODULUS as f64 * tau, 25.0).unwrap();
        assert_eq!(coarse, 1);
    }

    #[test]
    fn bubble_swaps_transition_pair() {
        let code = ThermometerCode::parse("11111000").unwrap();
        assert_eq!(force_bubble(&code).to_string(), "11110100");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(inject_bubbles(&code, 0.0, &mut rng), code);
        assert_eq!(inject_bubbles(&code, 1.0, &mut rng).to_string(), "11110100");
        let full = ThermometerCode::with_ones(8, 8);
        assert_eq!(force_bubble(&full), full);
    }

    #[test]
    fn json_round_trip_validates() {
        let m = LineConfig::default().build().unwrap();
        let back = DelayLineModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let broken = m.to_json().replace("\"n_taps\": 144", "\"n_taps\": 12");
        assert!(DelayLineModel::from_json(&broken).is_err());
    }
}
