//! Discrete-event model of the on-chip record memory and its drain.
//!
//! The memory is written as a ring at `fill_rate`. Data leave it in blocks:
//! in continuous mode each half raises an interrupt when full and is then
//! transferred; in request mode the host asks every `period` seconds for
//! everything between the previously requested address and the current one.
//! Transfers are serialized (a block waits while the previous one is still
//! moving) and take `drain_time_half` per `capacity/2` records. A block
//! stays locked until its transfer ends; the writer overflows when it comes
//! back round to a block that is still locked.

use serde::{Deserialize, Serialize};

use super::StreamError;

/// Number of timeline entries kept in a report.
const TIMELINE_LIMIT: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BufferMode {
    Continuous,
    Request { period: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferModel {
    pub capacity: u64,
    /// Records per second.
    pub fill_rate: f64,
    /// Seconds to transfer `capacity/2` records.
    pub drain_time_half: f64,
    pub mode: BufferMode,
}

impl BufferModel {
    pub const DEFAULT_CAPACITY: u64 = 1 << 16;

    /// Drain over a link of `link_bps` bits/s moving 64-bit records.
    pub fn over_link(capacity: u64, fill_rate: f64, link_bps: f64, mode: BufferMode) -> Self {
        Self {
            capacity,
            fill_rate,
            drain_time_half: (capacity / 2) as f64 * 64.0 / link_bps,
            mode,
        }
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        let bad = |m: String| Err(StreamError::InvalidModel(m));
        if self.capacity < 2 {
            return bad(format!("capacity {} is below 2 records", self.capacity));
        }
        if !(self.fill_rate.is_finite() && self.fill_rate > 0.0) {
            return bad(format!("fill rate {} must be positive", self.fill_rate));
        }
        if !(self.drain_time_half.is_finite() && self.drain_time_half > 0.0) {
            return bad(format!("drain time {} must be positive", self.drain_time_half));
        }
        if let BufferMode::Request { period } = self.mode {
            if !(period.is_finite() && period > 0.0) {
                return bad(format!("request period {period} must be positive"));
            }
        }
        Ok(())
    }

    /// Seconds to fill half the memory.
    pub fn half_fill_time(&self) -> f64 {
        (self.capacity / 2) as f64 / self.fill_rate
    }

    /// `drain_time_half < (capacity/2)/fill_rate`.
    pub fn sustainable(&self) -> bool {
        self.drain_time_half < self.half_fill_time()
    }

    /// Seconds per block and records per block.
    fn block(&self) -> (f64, f64) {
        match self.mode {
            BufferMode::Continuous => (self.half_fill_time(), (self.capacity / 2) as f64),
            BufferMode::Request { period } => (period, self.fill_rate * period),
        }
    }

    fn drain_per_record(&self) -> f64 {
        self.drain_time_half / (self.capacity / 2) as f64
    }

    /// First overflow time from the rates alone, or `None` if the memory
    /// never overflows.
    pub fn first_overflow_closed_form(&self) -> Option<f64> {
        let (p, n) = self.block();
        let lap = self.capacity as f64 / self.fill_rate;
        let transfer = n * self.drain_per_record();
        // Block k (k ≥ 1) is ready at k·p; without backlog its transfer ends
        // at k·p + transfer and the writer reaches it again at (k−1)·p + lap.
        if p + transfer >= lap {
            return Some(lap);
        }
        let backlog = transfer - p;
        if backlog <= 0.0 {
            return None;
        }
        // With backlog, block k finishes at p + k·transfer.
        let k = ((lap - 2.0 * p) / backlog).ceil().max(1.0);
        Some((k - 1.0) * p + lap)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterruptKind {
    Half,
    Full,
    Request,
    Overflow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interrupt {
    pub time: f64,
    pub kind: InterruptKind,
    /// Records in the block.
    pub records: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferReport {
    pub duration: f64,
    pub first_overflow: Option<f64>,
    pub overflow_events: u64,
    pub interrupts: u64,
    /// First entries of the event timeline.
    pub timeline: Vec<Interrupt>,
    pub records_written: f64,
    pub records_drained: f64,
    pub records_lost: f64,
    /// Drained records per second of simulated time.
    pub effective_throughput: f64,
    /// Longest time a ready block waited for the transfer engine.
    pub max_queue_delay: f64,
}

pub fn simulate_buffer(model: &BufferModel, duration: f64) -> Result<BufferReport, StreamError> {
    model.validate()?;
    if !(duration.is_finite() && duration > 0.0) {
        return Err(StreamError::InvalidModel(format!(
            "duration {duration} must be positive"
        )));
    }
    let (p, n) = model.block();
    let lap = model.capacity as f64 / model.fill_rate;
    let transfer = n * model.drain_per_record();
    let mut report = BufferReport {
        duration,
        first_overflow: None,
        overflow_events: 0,
        interrupts: 0,
        timeline: Vec::new(),
        records_written: model.fill_rate * duration,
        records_drained: 0.0,
        records_lost: 0.0,
        effective_throughput: 0.0,
        max_queue_delay: 0.0,
    };
    let log = |r: &mut BufferReport, ev: Interrupt| {
        if r.timeline.len() < TIMELINE_LIMIT {
            r.timeline.push(ev);
        }
    };
    let mut engine_free = 0.0f64;
    let mut k = 1u64;
    loop {
        let ready = k as f64 * p;
        if ready > duration {
            break;
        }
        let kind = match model.mode {
            BufferMode::Continuous if k % 2 == 1 => InterruptKind::Half,
            BufferMode::Continuous => InterruptKind::Full,
            BufferMode::Request { .. } => InterruptKind::Request,
        };
        report.interrupts += 1;
        log(
            &mut report,
            Interrupt {
                time: ready,
                kind,
                records: n,
            },
        );
        let start = ready.max(engine_free);
        let end = start + transfer;
        let overwrite = (k - 1) as f64 * p + lap;
        if end >= overwrite {
            report.overflow_events += 1;
            report.records_lost += n;
            report.first_overflow.get_or_insert(overwrite);
            log(
                &mut report,
                Interrupt {
                    time: overwrite,
                    kind: InterruptKind::Overflow,
                    records: n,
                },
            );
            // A block already overwritten before its turn is skipped.
            if start < overwrite {
                engine_free = end;
            }
        } else {
            report.max_queue_delay = report.max_queue_delay.max(start - ready);
            engine_free = end;
            if end <= duration {
                report.records_drained += n;
            }
        }
        k += 1;
    }
    report.effective_throughput = report.records_drained / duration;
    Ok(report)
}
