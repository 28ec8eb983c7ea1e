//! Loopback streaming benchmark and buffer-model check.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ExperimentError, ExperimentSpec, Provenance};
use crate::stream::{
    capture_continuous, capture_requests, decode_record, sequence_source, serve, simulate_buffer, BufferMode,
    BufferModel, BufferReport, ServeMode, ServerConfig, StreamError,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamBenchConfig {
    pub records: u64,
    pub server: ServerConfig,
    /// Link rate assumed by the buffer model, bits/s.
    pub link_bps: f64,
    /// Acquisition rate assumed by the buffer model, records/s.
    pub model_rate: f64,
    /// Simulated seconds for the buffer model.
    pub model_duration: f64,
}

impl Default for StreamBenchConfig {
    fn default() -> Self {
        Self {
            records: 10_000_000,
            server: ServerConfig::default(),
            link_bps: 1e9,
            model_rate: 12e6,
            model_duration: 3600.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamBenchReport {
    pub provenance: Provenance,
    pub records_sent: u64,
    pub records_received: u64,
    /// Records whose sequence stamp was not the next expected one.
    pub out_of_order: u64,
    pub seconds: f64,
    pub records_per_second: f64,
    pub server_dropped: u64,
    /// Records per response (request mode only).
    pub responses: Vec<u64>,
    pub buffer_model: BufferReport,
}

impl StreamBenchReport {
    pub fn lossless(&self) -> bool {
        self.records_received == self.records_sent && self.out_of_order == 0 && self.server_dropped == 0
    }
}

/// Serves `records` sequence-stamped records over loopback and checks that
/// the client receives each exactly once and in order.
pub fn run_stream_bench(spec: &ExperimentSpec) -> Result<StreamBenchReport, ExperimentError> {
    let cfg = &spec.stream;
    let mut handle = serve(&cfg.server, Box::new(sequence_source(cfg.records)))?;
    let addr = handle.local_addr();
    let mut expected = 0u64;
    let mut out_of_order = 0u64;
    let mut check = |records: &[u64]| -> Result<(), StreamError> {
        for &w in records {
            let (tag, _) = decode_record(w)?;
            if tag.coarse != expected {
                out_of_order += 1;
            }
            expected = tag.coarse + 1;
        }
        Ok(())
    };
    let (received, seconds, responses) = match cfg.server.mode {
        ServeMode::Continuous => {
            let s = capture_continuous(addr, &mut check)?;
            (s.records, s.seconds, Vec::new())
        }
        ServeMode::Request { period_ms } => {
            let s = capture_requests(addr, Duration::from_millis(period_ms), &mut check)?;
            (s.records, s.seconds, s.responses)
        }
    };
    handle.wait_source();
    let stats = handle.shutdown();
    let mode = match cfg.server.mode {
        ServeMode::Continuous => BufferMode::Continuous,
        ServeMode::Request { period_ms } => BufferMode::Request {
            period: period_ms as f64 * 1e-3,
        },
    };
    let model = BufferModel::over_link(cfg.server.buffer_records as u64, cfg.model_rate, cfg.link_bps, mode);
    Ok(StreamBenchReport {
        provenance: spec.provenance(),
        records_sent: cfg.records,
        records_received: received,
        out_of_order,
        seconds,
        records_per_second: received as f64 / seconds,
        server_dropped: stats.dropped,
        responses,
        buffer_model: simulate_buffer(&model, cfg.model_duration)?,
    })
}
