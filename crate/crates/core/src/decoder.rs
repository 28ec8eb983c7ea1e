//! Ones-counting thermometer decoder.
//!
//! The hardware sums the captured bits with a pipelined adder tree. Here each
//! 64-bit word is reduced by the same tree in bit-parallel form (pairs, then
//! nibbles, bytes, and so on), and word sums are added pairwise. Counting
//! ones makes the result invariant to a neighbouring-bit swap.

use thiserror::Error;

use crate::delayline::ThermometerCode;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("code length {got} does not match the line's {expected} taps")]
    LengthMismatch { expected: usize, got: usize },
}

/// Number of ones in a decoded code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FineValue {
    pub index: usize,
}

pub fn decode(code: &ThermometerCode, n_taps: usize) -> Result<FineValue, DecodeError> {
    if code.len() != n_taps {
        return Err(DecodeError::LengthMismatch {
            expected: n_taps,
            got: code.len(),
        });
    }
    let mut level: Vec<u64> = code.words().iter().map(|&w| word_tree(w)).collect();
    while level.len() > 1 {
        level = level.chunks(2).map(|p| p.iter().sum()).collect();
    }
    Ok(FineValue {
        index: level.first().copied().unwrap_or(0) as usize,
    })
}

fn word_tree(w: u64) -> u64 {
    let w = (w & 0x5555_5555_5555_5555) + ((w >> 1) & 0x5555_5555_5555_5555);
    let w = (w & 0x3333_3333_3333_3333) + ((w >> 2) & 0x3333_3333_3333_3333);
    let w = (w & 0x0f0f_0f0f_0f0f_0f0f) + ((w >> 4) & 0x0f0f_0f0f_0f0f_0f0f);
    let w = (w & 0x00ff_00ff_00ff_00ff) + ((w >> 8) & 0x00ff_00ff_00ff_00ff);
    let w = (w & 0x0000_ffff_0000_ffff) + ((w >> 16) & 0x0000_ffff_0000_ffff);
    (w & 0x0000_0000_ffff_ffff) + (w >> 32)
}

/// Bin index of a fine value: bin 1 starts at the first non-zero tap.
pub fn bin_index(fine: FineValue, leading_zero_taps: usize) -> usize {
    fine.index.saturating_sub(leading_zero_taps) + 1
}
