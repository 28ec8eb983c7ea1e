//! Calibration strategies compared in the temperature sweep, selected by name.
//!
//! | name           | table used for a tag                                         |
//! |----------------|--------------------------------------------------------------|
//! | `fixed_ro_5C`  | RO code-density table from the reference temperature         |
//! | `fixed_spd_5C` | laser/SPD code-density table from the reference temperature  |
//! | `ro_per_step`  | fresh RO table acquired at the start of every step           |
//! | `steady`       | sliding window over the measured detections themselves       |
//!
//! The steady window is seeded with the reference laser/SPD acquisition in
//! its original order and is never reset between steps.

use std::collections::BTreeMap;

use super::{build_table, CalibError, CalibrationTable, SteadyState};
use crate::delayline::RawTag;

/// Inputs available when a strategy is instantiated for one channel.
pub struct StrategyContext<'a> {
    pub coarse_period: f64,
    /// RO histogram at the reference temperature.
    pub reference_ro: &'a [u64],
    /// Bin sequence of the reference laser/SPD acquisition, in arrival order.
    pub reference_spd: &'a [u16],
    pub window: usize,
}

pub trait CalibrationStrategy: Send {
    fn name(&self) -> &'static str;

    /// Called once per temperature step, before any tag of that step.
    fn begin_step(&mut self, step_ro: &[u64]) -> Result<(), CalibError>;

    /// Calibrated timestamp, or `None` when the tag's bin lies outside the
    /// strategy's current table.
    fn calibrate(&mut self, tag: &RawTag) -> Option<f64>;

    /// Snapshot of the table currently in use.
    fn table(&self) -> Result<CalibrationTable, CalibError>;
}

pub type StrategyFactory = fn(&StrategyContext<'_>) -> Result<Box<dyn CalibrationStrategy>, CalibError>;

pub struct StrategyRegistry {
    factories: BTreeMap<&'static str, StrategyFactory>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtin() -> Self {
        let mut r = Self::empty();
        r.register("fixed_ro_5C", |ctx| {
            Ok(Box::new(Fixed::new(
                "fixed_ro_5C",
                build_table(ctx.reference_ro, ctx.coarse_period)?,
            )))
        });
        r.register("fixed_spd_5C", |ctx| {
            let counts = super::histogram(ctx.reference_spd.iter().map(|&b| b as usize));
            Ok(Box::new(Fixed::new(
                "fixed_spd_5C",
                build_table(&counts, ctx.coarse_period)?,
            )))
        });
        r.register("ro_per_step", |ctx| {
            Ok(Box::new(RoPerStep {
                table: build_table(ctx.reference_ro, ctx.coarse_period)?,
                coarse_period: ctx.coarse_period,
            }))
        });
        r.register("steady", |ctx| {
            let mut state = SteadyState::new(ctx.window, ctx.coarse_period)?;
            for &b in ctx.reference_spd {
                state.push(b as usize)?;
            }
            if state.is_empty() {
                return Err(CalibError::EmptyHistogram);
            }
            Ok(Box::new(Steady { state }))
        });
        r
    }

    pub fn register(&mut self, name: &'static str, factory: StrategyFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn build(&self, name: &str, ctx: &StrategyContext<'_>) -> Result<Box<dyn CalibrationStrategy>, CalibError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| CalibError::UnknownStrategy(name.to_string()))?;
        factory(ctx)
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::with_builtin()
    }
}

struct Fixed {
    name: &'static str,
    table: CalibrationTable,
}

impl Fixed {
    fn new(name: &'static str, table: CalibrationTable) -> Self {
        Self { name, table }
    }
}

fn from_table(table: &CalibrationTable, tag: &RawTag) -> Option<f64> {
    super::calibrate_tag(table, tag).ok()
}

impl CalibrationStrategy for Fixed {
    fn name(&self) -> &'static str {
        self.name
    }

    fn begin_step(&mut self, _step_ro: &[u64]) -> Result<(), CalibError> {
        Ok(())
    }

    fn calibrate(&mut self, tag: &RawTag) -> Option<f64> {
        from_table(&self.table, tag)
    }

    fn table(&self) -> Result<CalibrationTable, CalibError> {
        Ok(self.table.clone())
    }
}

struct RoPerStep {
    table: CalibrationTable,
    coarse_period: f64,
}

impl CalibrationStrategy for RoPerStep {
    fn name(&self) -> &'static str {
        "ro_per_step"
    }

    fn begin_step(&mut self, step_ro: &[u64]) -> Result<(), CalibError> {
        self.table = build_table(step_ro, self.coarse_period)?;
        Ok(())
    }

    fn calibrate(&mut self, tag: &RawTag) -> Option<f64> {
        from_table(&self.table, tag)
    }

    fn table(&self) -> Result<CalibrationTable, CalibError> {
        Ok(self.table.clone())
    }
}

struct Steady {
    state: SteadyState,
}

impl CalibrationStrategy for Steady {
    fn name(&self) -> &'static str {
        "steady"
    }

    fn begin_step(&mut self, _step_ro: &[u64]) -> Result<(), CalibError> {
        Ok(())
    }

    fn calibrate(&mut self, tag: &RawTag) -> Option<f64> {
        if tag.fine > 0 {
            self.state.push(tag.fine as usize).ok()?;
        }
        self.state.calibrate(tag)
    }

    fn table(&self) -> Result<CalibrationTable, CalibError> {
        self.state.table()
    }
}
