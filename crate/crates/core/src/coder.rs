//! Byte-renormalizing range coder over fixed-point frequency tables.
//!
//! All arithmetic is integer-only, so identical inputs produce byte-identical
//! payloads on every platform. Frequencies are 16-bit fixed point: each table
//! sums to exactly 2^16 and every symbol has frequency >= 1, which guarantees
//! a finite code length for any decodable symbol.

use crate::error::{Error, Result};

/// Fixed-point precision of all frequency tables.
pub const PRECISION_BITS: u32 = 16;
/// Total frequency mass per table: 2^16.
pub const TOTAL_FREQ: u32 = 1 << PRECISION_BITS;

/// Renormalize whenever the range drops below 2^56, keeping the top byte stable.
const RENORM_BOUND: u64 = 1 << 56;
/// Flush grid: the final code value is rounded up to a multiple of 2^48 so the
/// whole tail fits in two bytes.
const FLUSH_GRID: u64 = 1 << 48;

/// Cumulative frequency table for one distribution.
///
/// `cum` has one entry per symbol boundary: `cum[0] == 0`,
/// `cum[n] == 2^16`, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    cum: Vec<u32>,
}

impl CdfTable {
    /// Build from raw per-symbol frequencies. Each must be >= 1 and they must
    /// sum to exactly 2^16.
    pub fn from_freqs(freqs: &[u32]) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::invalid("frequency table must not be empty"));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc: u64 = 0;
        cum.push(0);
        for &f in freqs {
            if f == 0 {
                return Err(Error::invalid("every symbol frequency must be >= 1"));
            }
            acc += f as u64;
            if acc > TOTAL_FREQ as u64 {
                return Err(Error::invalid("frequencies exceed the 2^16 total"));
            }
            cum.push(acc as u32);
        }
        if acc != TOTAL_FREQ as u64 {
            return Err(Error::invalid(format!(
                "frequencies sum to {acc}, expected {TOTAL_FREQ}"
            )));
        }
        Ok(CdfTable { cum })
    }

    pub fn symbol_count(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn cum(&self, s: usize) -> u32 {
        self.cum[s]
    }

    pub fn freq(&self, s: usize) -> u32 {
        self.cum[s + 1] - self.cum[s]
    }

    pub fn freqs(&self) -> Vec<u32> {
        (0..self.symbol_count()).map(|s| self.freq(s)).collect()
    }

    /// Fixed-point probability of a symbol: freq / 2^16. Exact in f64.
    pub fn prob(&self, s: usize) -> f64 {
        self.freq(s) as f64 / TOTAL_FREQ as f64
    }

    /// Ideal fixed-point code length of a symbol in bits.
    pub fn bits(&self, s: usize) -> f64 {
        -self.prob(s).log2()
    }

    /// Symbol whose cumulative interval contains `slot` (< 2^16).
    fn symbol_for(&self, slot: u32) -> usize {
        debug_assert!(slot < TOTAL_FREQ);
        self.cum.partition_point(|&c| c <= slot) - 1
    }
}

/// Quantize a probability vector to fixed-point frequencies by largest-remainder
/// apportionment of 2^16, with every symbol guaranteed frequency >= 1.
///
/// Deterministic: remainder ties break toward the lower index when granting,
/// and surplus is reclaimed from the smallest remainders first.
pub fn build_cdf(probs: &[f64]) -> Result<CdfTable> {
    let n = probs.len();
    if n == 0 {
        return Err(Error::invalid("empty distribution"));
    }
    if n > TOTAL_FREQ as usize {
        return Err(Error::invalid(
            "alphabet larger than 2^16: cannot give every symbol frequency >= 1",
        ));
    }
    if probs.iter().any(|p| !p.is_finite() || *p <= 0.0) {
        return Err(Error::invalid("probabilities must be finite and > 0"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "probabilities sum to {sum}, expected 1"
        )));
    }

    let mut freq = vec![0u32; n];
    // (index, fractional remainder); lifted entries waive their remainder claim.
    let mut rem: Vec<(usize, f64)> = Vec::with_capacity(n);
    let mut total: u64 = 0;
    for (i, &p) in probs.iter().enumerate() {
        let ideal = p * TOTAL_FREQ as f64;
        let floor = ideal.floor();
        let (f, r) = if floor < 1.0 {
            (1u64, 0.0)
        } else {
            ((floor as u64).min(TOTAL_FREQ as u64), ideal - floor)
        };
        freq[i] = f as u32;
        rem.push((i, r));
        total += f;
    }

    match total.cmp(&(TOTAL_FREQ as u64)) {
        std::cmp::Ordering::Less => {
            let mut deficit = TOTAL_FREQ as u64 - total;
            rem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut k = 0;
            while deficit > 0 {
                freq[rem[k % n].0] += 1;
                deficit -= 1;
                k += 1;
            }
        }
        std::cmp::Ordering::Greater => {
            let mut surplus = total - TOTAL_FREQ as u64;
            rem.sort_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            while surplus > 0 {
                let mut progressed = false;
                for &(i, _) in &rem {
                    if surplus == 0 {
                        break;
                    }
                    if freq[i] > 1 {
                        let take = (freq[i] as u64 - 1).min(surplus) as u32;
                        freq[i] -= take;
                        surplus -= take as u64;
                        progressed = true;
                    }
                }
                debug_assert!(progressed, "surplus with no reducible frequency");
                if !progressed {
                    break;
                }
            }
        }
        std::cmp::Ordering::Equal => {}
    }

    CdfTable::from_freqs(&freq)
}

/// Streaming encoder. Feed symbols with per-symbol tables, then call `finish`.
pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u64::MAX,
            out: Vec::new(),
        }
    }

    pub fn encode(&mut self, cdf: &CdfTable, symbol: usize) {
        debug_assert!(symbol < cdf.symbol_count());
        let r = self.range >> PRECISION_BITS;
        let (low, carry) = self.low.overflowing_add(r * cdf.cum(symbol) as u64);
        if carry {
            Self::propagate_carry(&mut self.out);
        }
        self.low = low;
        self.range = r * cdf.freq(symbol) as u64;
        while self.range < RENORM_BOUND {
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Seal the stream. Rounds `low` up to the next multiple of 2^48 inside the
    /// final interval, whose top two bytes then pin the code value exactly; the
    /// decoder treats bytes past the end as zero.
    pub fn finish(mut self) -> Vec<u8> {
        let rounded = self.low.wrapping_add(FLUSH_GRID - 1) & !(FLUSH_GRID - 1);
        if rounded < self.low {
            Self::propagate_carry(&mut self.out);
        }
        self.low = rounded;
        self.out.push((self.low >> 56) as u8);
        self.low <<= 8;
        self.out.push((self.low >> 56) as u8);
        self.out
    }

    fn propagate_carry(out: &mut [u8]) {
        for b in out.iter_mut().rev() {
            let (nb, overflow) = b.overflowing_add(1);
            *b = nb;
            if !overflow {
                return;
            }
        }
        // The interval invariant low + range <= 2^(8W+64) makes this unreachable.
        debug_assert!(false, "carry escaped the emitted prefix");
    }
}

/// Streaming decoder over a sealed payload.
///
/// Reading past the end of the payload yields zero bytes; a wrong table
/// sequence or count therefore produces garbage symbols but never panics or
/// reads out of bounds.
pub struct RangeDecoder<'a> {
    code: u64,
    range: u64,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        let mut d = RangeDecoder {
            code: 0,
            range: u64::MAX,
            input,
            pos: 0,
        };
        for _ in 0..8 {
            d.code = (d.code << 8) | d.next_byte() as u64;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    pub fn decode(&mut self, cdf: &CdfTable) -> usize {
        let r = self.range >> PRECISION_BITS;
        let slot = (self.code / r).min(TOTAL_FREQ as u64 - 1) as u32;
        let s = cdf.symbol_for(slot);
        self.code = self.code.wrapping_sub(r * cdf.cum(s) as u64);
        self.range = r * cdf.freq(s) as u64;
        while self.range < RENORM_BOUND {
            self.code = (self.code << 8) | self.next_byte() as u64;
            self.range <<= 8;
        }
        s
    }
}

/// Encode a symbol sequence where `tables[j]` models position `j`.
pub fn encode_symbols(symbols: &[usize], tables: &[&CdfTable]) -> Result<Vec<u8>> {
    if symbols.len() != tables.len() {
        return Err(Error::invalid("one table required per symbol position"));
    }
    let mut enc = RangeEncoder::new();
    for (&s, t) in symbols.iter().zip(tables) {
        if s >= t.symbol_count() {
            return Err(Error::invalid(format!(
                "symbol {s} outside table alphabet of {} symbols",
                t.symbol_count()
            )));
        }
        enc.encode(t, s);
    }
    Ok(enc.finish())
}

/// Decode `tables.len()` symbols from a sealed payload.
pub fn decode_symbols(payload: &[u8], tables: &[&CdfTable]) -> Vec<usize> {
    let mut dec = RangeDecoder::new(payload);
    tables.iter().map(|t| dec.decode(t)).collect()
}

/// Ideal fixed-point code length of a symbol sequence, in bits.
pub fn ideal_bits(symbols: &[usize], tables: &[&CdfTable]) -> f64 {
    symbols.iter().zip(tables).map(|(&s, t)| t.bits(s)).sum()
}
