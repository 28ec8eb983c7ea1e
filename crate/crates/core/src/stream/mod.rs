//! Acquisition data path: 64-bit tag records, coarse-counter wrap handling,
//! the double-buffer drain model, and a TCP service that pushes or serves
//! records on request.
//!
//! Record layout (one `u64`, sent most significant byte first):
//!
//! ```text
//! 63            16 15      8 7     4 3     0
//! +---------------+---------+-------+-------+
//! | coarse (48)   | fine(8) | ch(4) | flags |
//! +---------------+---------+-------+-------+
//! ```
//!
//! Flag bit 0 marks a tag whose fine value lies inside the calibration
//! table; bits 1–3 are reserved and must be zero.

mod buffer;
mod capture;
mod ring;
mod server;
mod wire;

use thiserror::Error;

use crate::delayline::{RawTag, COARSE_BITS, COARSE_MASK, COARSE_MODULUS};

pub use buffer::{simulate_buffer, BufferMode, BufferModel, BufferReport, Interrupt, InterruptKind};
pub use capture::{
    read_capture, write_capture, CaptureHeader, CaptureReader, CaptureWriter, CAPTURE_MAGIC, CAPTURE_VERSION,
};
pub use ring::{OverflowPolicy, SharedRing};
pub use server::{
    capture_continuous, capture_requests, sequence_source, serve, CaptureStats, PolicyName, RecordSource, RequestStats,
    ServeMode, ServerConfig, ServerHandle, ServerStats,
};
pub use wire::{
    read_frame, read_request, write_error, write_frame, write_request, Frame, Request, ERROR_COUNT, OP_FETCH,
};

pub const FLAG_VALID: u8 = 0x1;
const FLAG_RESERVED: u8 = 0xE;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("{field} value {value} does not fit in {bits} bits")]
    FieldOverflow { field: &'static str, value: u64, bits: u32 },
    #[error("reserved flag bits set: {0:#x}")]
    ReservedFlags(u8),
    #[error("invalid buffer model: {0}")]
    InvalidModel(String),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("server rejected the request")]
    Rejected,
    #[error("bad capture file: {0}")]
    BadCapture(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Packs a tag into its wire word.
pub fn encode_record(tag: &RawTag, flags: u8) -> Result<u64, StreamError> {
    if tag.coarse > COARSE_MASK {
        return Err(StreamError::FieldOverflow {
            field: "coarse",
            value: tag.coarse,
            bits: COARSE_BITS,
        });
    }
    if tag.fine > 0xFF {
        return Err(StreamError::FieldOverflow {
            field: "fine",
            value: tag.fine.into(),
            bits: 8,
        });
    }
    if tag.channel > 0xF {
        return Err(StreamError::FieldOverflow {
            field: "channel",
            value: tag.channel.into(),
            bits: 4,
        });
    }
    if flags > 0xF {
        return Err(StreamError::FieldOverflow {
            field: "flags",
            value: flags.into(),
            bits: 4,
        });
    }
    if flags & FLAG_RESERVED != 0 {
        return Err(StreamError::ReservedFlags(flags));
    }
    Ok(tag.coarse << 16 | u64::from(tag.fine) << 8 | u64::from(tag.channel) << 4 | u64::from(flags))
}

pub fn decode_record(word: u64) -> Result<(RawTag, u8), StreamError> {
    let flags = (word & 0xF) as u8;
    if flags & FLAG_RESERVED != 0 {
        return Err(StreamError::ReservedFlags(flags));
    }
    let tag = RawTag {
        coarse: word >> 16,
        fine: ((word >> 8) & 0xFF) as u16,
        channel: ((word >> 4) & 0xF) as u8,
    };
    Ok((tag, flags))
}

/// Seconds until the 48-bit coarse counter wraps: `2^48 / f_s`.
pub fn overflow_horizon(f_s: f64) -> f64 {
    COARSE_MODULUS as f64 / f_s
}

/// Extends 48-bit coarse counts of one channel into a monotone tick count.
///
/// A count smaller than its predecessor is taken as one wrap of the counter.
/// Every tick after the first wrap is flagged so downstream consumers know
/// the raw coarse value alone no longer identifies the clock edge.
#[derive(Clone, Debug, Default)]
pub struct CoarseUnwrapper {
    last: Option<u64>,
    epoch: u64,
}

impl CoarseUnwrapper {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the extended tick and whether the counter has wrapped.
    pub fn unwrap(&mut self, coarse: u64) -> (u64, bool) {
        let coarse = coarse & COARSE_MASK;
        if let Some(prev) = self.last {
            if coarse < prev {
                self.epoch += 1;
            }
        }
        self.last = Some(coarse);
        ((self.epoch << COARSE_BITS) | coarse, self.epoch > 0)
    }

    pub fn wraps(&self) -> u64 {
        self.epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag(coarse: u64, fine: u16, channel: u8) -> RawTag {
        RawTag { coarse, fine, channel }
    }

    #[test]
    fn layout() {
        assert_eq!(encode_record(&tag(0, 0, 0), 0).unwrap(), 0);
        assert_eq!(encode_record(&tag(1, 2, 3), 1).unwrap(), 0x0000_0000_0001_0231);
        assert_eq!(
            encode_record(&tag(COARSE_MASK, 255, 15), 1).unwrap(),
            0xFFFF_FFFF_FFFF_FFF1
        );
        assert_eq!(decode_record(0x0000_0000_0001_0231).unwrap(), (tag(1, 2, 3), 1));
    }

    #[test]
    fn field_overflow() {
        assert!(matches!(
            encode_record(&tag(COARSE_MODULUS, 0, 0), 0),
            Err(StreamError::FieldOverflow { field: "coarse", .. })
        ));
        assert!(encode_record(&tag(0, 256, 0), 0).is_err());
        assert!(encode_record(&tag(0, 0, 16), 0).is_err());
        assert!(matches!(
            encode_record(&tag(0, 0, 0), 2),
            Err(StreamError::ReservedFlags(2))
        ));
        assert!(decode_record(0x4).is_err());
    }

    #[test]
    fn horizon() {
        assert_eq!(overflow_horizon(COARSE_MODULUS as f64), 1.0);
        let h = overflow_horizon(412.5e6);
        assert!((h - 682_363.58).abs() < 0.01, "{h}");
    }

    #[test]
    fn unwrap_across_wrap() {
        let mut u = CoarseUnwrapper::new();
        assert_eq!(u.unwrap(COARSE_MASK - 1), (COARSE_MASK - 1, false));
        assert_eq!(u.unwrap(COARSE_MASK), (COARSE_MASK, false));
        assert_eq!(u.unwrap(0), (COARSE_MODULUS, true));
        assert_eq!(u.unwrap(5), (COARSE_MODULUS + 5, true));
        assert_eq!(u.wraps(), 1);
    }
}
