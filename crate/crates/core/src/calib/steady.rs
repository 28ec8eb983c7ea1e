//! Sliding-window ("steady") calibration.
//!
//! The window holds the bin indices of the most recent events. Every push
//! evicts the oldest entry once the window is full, so the histogram always
//! describes the last `capacity` detections. A Fenwick tree keeps prefix
//! sums current, which lets a single bin center be evaluated in O(log N)
//! without materializing the whole table.

use std::collections::VecDeque;

use super::{build_table, center_from_sums, CalibError, CalibrationTable, Fenwick};
use crate::delayline::RawTag;

/// Highest bin index a window can hold (the record format carries 8 bits).
pub const MAX_BINS: usize = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedStatus {
    /// The seeded window reproduces the static histogram exactly.
    Exact,
    /// The static histogram held more events than the capacity; the most
    /// recent `capacity` entries of the round-robin expansion were kept.
    Truncated,
    /// Capacity is below the number of populated bins, so some bins cannot
    /// be represented at all.
    CapacityBelowPopulatedBins,
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    window: VecDeque<u16>,
    capacity: usize,
    counts: Vec<u64>,
    prefix: Fenwick,
    last_bin: usize,
    coarse_period: f64,
}

impl SteadyState {
    pub fn new(capacity: usize, coarse_period: f64) -> Result<Self, CalibError> {
        if capacity == 0 {
            return Err(CalibError::ZeroCapacity);
        }
        if !(coarse_period.is_finite() && coarse_period > 0.0) {
            return Err(CalibError::InvalidPeriod(coarse_period));
        }
        Ok(Self {
            window: VecDeque::with_capacity(capacity),
            capacity,
            counts: vec![0; MAX_BINS],
            prefix: Fenwick::new(MAX_BINS),
            last_bin: 0,
            coarse_period,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.window.len() == self.capacity
    }

    pub fn window(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.window.iter().map(|&b| b as usize)
    }

    /// Live histogram over bins `1..=N_c`.
    pub fn counts(&self) -> &[u64] {
        &self.counts[..self.last_bin]
    }

    /// Prefix sums `S_0..=S_{N_c}` read from the incremental structure.
    pub fn prefix_sums(&self) -> Vec<u64> {
        (0..=self.last_bin).map(|i| self.prefix.prefix(i)).collect()
    }

    /// Last populated bin.
    pub fn n_c(&self) -> usize {
        self.last_bin
    }

    pub fn coarse_period(&self) -> f64 {
        self.coarse_period
    }

    /// Appends one detection, evicting the oldest once the window is full.
    pub fn push(&mut self, fine: usize) -> Result<(), CalibError> {
        if fine == 0 || fine > MAX_BINS {
            return Err(CalibError::InvalidBin {
                got: fine,
                max: MAX_BINS,
            });
        }
        if self.window.len() == self.capacity {
            let old = self.window.pop_front().expect("full window") as usize;
            self.counts[old - 1] -= 1;
            self.prefix.sub(old, 1);
            if old == self.last_bin && self.counts[old - 1] == 0 {
                let total = self.window.len() as u64;
                self.last_bin = self.prefix.lower_bound(total).unwrap_or(0);
            }
        }
        self.window.push_back(fine as u16);
        self.counts[fine - 1] += 1;
        self.prefix.add(fine, 1);
        self.last_bin = self.last_bin.max(fine);
        Ok(())
    }

    /// Calibrated center of `fine` under the current window, or `None` if
    /// the bin lies beyond the populated range.
    pub fn center(&self, fine: usize) -> Option<f64> {
        if fine == 0 {
            return Some(0.0);
        }
        if fine > self.last_bin {
            return None;
        }
        let total = self.window.len() as u64;
        let scale = self.coarse_period / total as f64;
        let w_last = self.counts[self.last_bin - 1] as f64;
        // Empty bins inherit the center of the nearest populated bin below,
        // falling back to bin 1.
        let mut bin = fine;
        if self.counts[bin - 1] == 0 && bin > 1 {
            let before = self.prefix.prefix(bin - 1);
            bin = if before == 0 {
                1
            } else {
                self.prefix.lower_bound(before).expect("prefix within total")
            };
        }
        let before = self.prefix.prefix(bin - 1);
        Some(center_from_sums(before, self.counts[bin - 1], w_last, scale))
    }

    pub fn calibrate(&self, tag: &RawTag) -> Option<f64> {
        self.center(tag.fine as usize)
            .map(|c| tag.coarse as f64 * self.coarse_period - c)
    }

    /// Materializes the table for the current window.
    pub fn table(&self) -> Result<CalibrationTable, CalibError> {
        build_table(self.counts(), self.coarse_period)
    }
}

/// Seeds a window from a static histogram by round-robin expansion: one
/// event per populated bin per pass, in ascending bin order, until every
/// count is used.
pub fn steady_init(
    static_counts: &[u64],
    capacity: usize,
    coarse_period: f64,
) -> Result<(SteadyState, SeedStatus), CalibError> {
    let mut state = SteadyState::new(capacity, coarse_period)?;
    let populated = static_counts.iter().filter(|&&c| c > 0).count();
    if populated == 0 {
        return Err(CalibError::EmptyHistogram);
    }
    if let Some(pos) = static_counts.iter().rposition(|&c| c > 0) {
        if pos + 1 > MAX_BINS {
            return Err(CalibError::InvalidBin {
                got: pos + 1,
                max: MAX_BINS,
            });
        }
    }
    let total: u64 = static_counts.iter().sum();
    let mut remaining = static_counts.to_vec();
    let mut sequence = Vec::with_capacity(total as usize);
    while sequence.len() < total as usize {
        for (k, r) in remaining.iter_mut().enumerate() {
            if *r > 0 {
                *r -= 1;
                sequence.push(k + 1);
            }
        }
    }
    let skip = sequence.len().saturating_sub(capacity);
    for &b in &sequence[skip..] {
        state.push(b)?;
    }
    let status = if capacity < populated {
        SeedStatus::CapacityBelowPopulatedBins
    } else if skip > 0 {
        SeedStatus::Truncated
    } else {
        SeedStatus::Exact
    };
    if status != SeedStatus::Exact {
        log::warn!(
            "steady window seeded with status {status:?} (capacity {capacity}, {total} events, {populated} bins)"
        );
    }
    Ok((state, status))
}
