//! Integer range coder over static 16-bit frequency tables.
//!
//! The coder keeps a 32-bit range and a 33-bit low register with delayed carry
//! propagation, emitting bytes most significant first. A stream of `n`
//! renormalizations is exactly `n + 4` bytes long; the decoder consumes all of
//! them, so leftover or missing bytes are reported as corruption.

mod cdf;

pub use cdf::{
    build_cdf, normal_cdf, normal_tail, sigma_for_key, sigma_key, CdfCache, CdfTable, PROB_BITS,
    PROB_TOTAL, SIGMA_GRID_STEP, SYMBOL_LIMIT,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RangeCoderError {
    #[error("standard deviation must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("frequency table must be positive and sum to 2^16")]
    InvalidTable,
    #[error("{symbols} symbols but {models} models")]
    LengthMismatch { symbols: usize, models: usize },
    #[error("range-coded stream exhausted")]
    Exhausted,
    #[error("range-coded stream is corrupt")]
    Corrupt,
    #[error("{0} unread bytes after the last symbol")]
    TrailingBytes(usize),
}

const TOP: u32 = 1 << 24;

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    started: bool,
    clamped: usize,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 0,
            started: false,
            clamped: 0,
            out: Vec::new(),
        }
    }

    /// Encodes `symbol`, clamping it into the table's support first.
    pub fn encode(&mut self, symbol: i32, table: &CdfTable) {
        let s = table.clamp_symbol(symbol);
        if s != symbol {
            self.clamped += 1;
        }
        let (start, freq) = table.range_of(s);
        let r = self.range >> PROB_BITS;
        self.low += u64::from(r) * u64::from(start);
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Number of symbols that fell outside their table and were clamped.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > u64::from(u32::MAX) {
            let carry = (self.low >> 32) as u8;
            if self.started {
                self.out.push(self.cache.wrapping_add(carry));
            }
            for _ in 0..self.pending {
                self.out.push(0xFFu8.wrapping_add(carry));
            }
            self.pending = 0;
            self.cache = (self.low >> 24) as u8;
            self.started = true;
        } else {
            self.pending += 1;
        }
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self, RangeCoderError> {
        let head: [u8; 4] = bytes
            .get(..4)
            .and_then(|b| b.try_into().ok())
            .ok_or(RangeCoderError::Exhausted)?;
        Ok(Self {
            bytes,
            pos: 4,
            code: u32::from_be_bytes(head),
            range: u32::MAX,
        })
    }

    pub fn decode(&mut self, table: &CdfTable) -> Result<i32, RangeCoderError> {
        let r = self.range >> PROB_BITS;
        let value = self.code / r;
        if value >= PROB_TOTAL {
            return Err(RangeCoderError::Corrupt);
        }
        let (symbol, start, freq) = table.lookup(value);
        self.code -= r * start;
        self.range = r * freq;
        while self.range < TOP {
            let byte = *self.bytes.get(self.pos).ok_or(RangeCoderError::Exhausted)?;
            self.pos += 1;
            self.code = (self.code << 8) | u32::from(byte);
            self.range <<= 8;
        }
        Ok(symbol)
    }

    /// Checks that every byte of the stream was consumed.
    pub fn finish(self) -> Result<(), RangeCoderError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(RangeCoderError::TrailingBytes(n)),
        }
    }
}

fn check_lengths(symbols: usize, models: usize) -> Result<(), RangeCoderError> {
    if symbols != models {
        return Err(RangeCoderError::LengthMismatch { symbols, models });
    }
    Ok(())
}

/// Encodes `symbols[i]` under `models[i]`.
pub fn encode(symbols: &[i32], models: &[&CdfTable]) -> Result<Vec<u8>, RangeCoderError> {
    check_lengths(symbols.len(), models.len())?;
    let mut enc = RangeEncoder::new();
    for (&s, table) in symbols.iter().zip(models) {
        enc.encode(s, table);
    }
    Ok(enc.finish())
}

pub fn decode(bytes: &[u8], models: &[&CdfTable]) -> Result<Vec<i32>, RangeCoderError> {
    let mut dec = RangeDecoder::new(bytes)?;
    let symbols = models
        .iter()
        .map(|t| dec.decode(t))
        .collect::<Result<Vec<_>, _>>()?;
    dec.finish()?;
    Ok(symbols)
}

/// Ideal code length `Σ -log2(freq / 2^16)` in bits.
pub fn estimate_bits(symbols: &[i32], models: &[&CdfTable]) -> Result<f64, RangeCoderError> {
    check_lengths(symbols.len(), models.len())?;
    Ok(symbols
        .iter()
        .zip(models)
        .map(|(&s, t)| f64::from(PROB_BITS) - f64::from(t.frequency(s)).log2())
        .sum())
}
