//! Byte-oriented range coder with 64-bit low register and static frequency
//! tables (carry handling in the LZMA style).
//!
//! Probabilities are supplied as integer frequency tables summing to
//! `1 << PRECISION_BITS`; every symbol must have a nonzero frequency. The
//! encoder emits a self-terminating stream: the decoder needs the symbol
//! count (from shape metadata) and the same tables, nothing else.

use crate::error::{Error, Result};

/// Frequency table precision: total mass is `1 << PRECISION_BITS`.
/// 16 bits keeps eight bits of headroom above the renormalization
/// threshold (the range truncation cost stays under ~1e-3 bits/symbol)
/// and makes the minimum representable symbol probability exactly the
/// 2^-16 pmf floor the latent prior uses.
pub const PRECISION_BITS: u32 = 16;
pub const TOTAL_FREQ: u32 = 1 << PRECISION_BITS;

const TOP: u32 = 1 << 24;

/// Static cumulative-frequency model over a contiguous symbol alphabet.
#[derive(Debug, Clone)]
pub struct FreqTable {
    /// cum[s] .. cum[s+1] is symbol s's slot; cum[len] == TOTAL_FREQ.
    cum: Vec<u32>,
}

impl FreqTable {
    /// Build from real-valued probabilities (need not be normalized).
    /// Every symbol gets frequency >= 1; a largest-remainder pass makes the
    /// total exactly `TOTAL_FREQ`.
    pub fn from_probabilities(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Coder("empty probability table".into()));
        }
        if probs.len() as u64 > TOTAL_FREQ as u64 / 2 {
            return Err(Error::Coder(format!("alphabet of {} too large", probs.len())));
        }
        let sum: f64 = probs.iter().sum();
        if !(sum > 0.0) || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Coder("invalid probabilities".into()));
        }
        let n = probs.len();
        let mut freqs: Vec<u64> = probs
            .iter()
            .map(|p| (((p / sum) * TOTAL_FREQ as f64).round() as u64).max(1))
            .collect();
        // largest-remainder style fix-up to hit the exact total
        let mut total: u64 = freqs.iter().sum();
        if total != TOTAL_FREQ as u64 {
            // adjust the largest bins first; they absorb rounding drift with
            // the least relative distortion
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| freqs[b].cmp(&freqs[a]));
            let mut i = 0;
            while total != TOTAL_FREQ as u64 {
                let idx = order[i % n];
                if total > TOTAL_FREQ as u64 {
                    if freqs[idx] > 1 {
                        freqs[idx] -= 1;
                        total -= 1;
                    }
                } else {
                    freqs[idx] += 1;
                    total += 1;
                }
                i += 1;
            }
        }
        let mut cum = Vec::with_capacity(n + 1);
        let mut acc = 0u32;
        cum.push(0);
        for f in &freqs {
            acc += *f as u32;
            cum.push(acc);
        }
        debug_assert_eq!(acc, TOTAL_FREQ);
        Ok(FreqTable { cum })
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn slot(&self, sym: usize) -> (u32, u32) {
        (self.cum[sym], self.cum[sym + 1] - self.cum[sym])
    }

    /// Symbol whose cumulative slot contains `v`.
    fn lookup(&self, v: u32) -> usize {
        // binary search over cum: find s with cum[s] <= v < cum[s+1]
        let mut lo = 0usize;
        let mut hi = self.len();
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cum[mid] <= v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        // keep only bits 0..24 and shift them up; bits 24..32 moved to cache
        self.low = ((self.low as u32) << 8) as u64;
    }

    pub fn encode(&mut self, table: &FreqTable, sym: usize) -> Result<()> {
        if sym >= table.len() {
            return Err(Error::Coder(format!("symbol {} outside alphabet of {}", sym, table.len())));
        }
        let (cum, freq) = table.slot(sym);
        let r = self.range >> PRECISION_BITS;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
        Ok(())
    }

    /// Flush and return the coded bytes.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self> {
        if input.len() < 5 {
            return Err(Error::Coder(format!("stream of {} bytes too short", input.len())));
        }
        // first byte is the initial cache flush, always zero
        let mut code = 0u32;
        for i in 1..5 {
            code = (code << 8) | input[i] as u32;
        }
        Ok(RangeDecoder { code, range: u32::MAX, input, pos: 5 })
    }

    pub fn decode(&mut self, table: &FreqTable) -> Result<usize> {
        let r = self.range >> PRECISION_BITS;
        let v = (self.code / r).min(TOTAL_FREQ - 1);
        let sym = table.lookup(v);
        let (cum, freq) = table.slot(sym);
        self.code -= r * cum;
        self.range = r * freq;
        while self.range < TOP {
            if self.pos >= self.input.len() {
                return Err(Error::Coder("truncated range-coded stream".into()));
            }
            self.code = (self.code << 8) | self.input[self.pos] as u32;
            self.pos += 1;
            self.range <<= 8;
        }
        Ok(sym)
    }
}
