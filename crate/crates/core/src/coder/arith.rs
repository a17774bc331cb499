//! Static-model arithmetic coding.
//!
//! A byte-oriented range coder with a 64-bit state. The coding interval is
//! kept at least `2^56` wide, so the integer division `range / total`
//! loses at most `total / 2^56` of a symbol's probability mass; with
//! totals capped at `2^32` the per-symbol overhead is below `1e-7` bits.
//! Carries out of the low word ripple back through the bytes already
//! emitted. Only integer arithmetic is used, so the output is identical on
//! every platform.
//!
//! Termination emits a single byte, which makes the stream at most
//! `Σ −log2 q(s) + 8` bits long (plus the division loss above).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TOP: u64 = 1 << 56;
/// Largest allowed sum of frequencies.
pub const MAX_TOTAL: u64 = 1 << 32;
/// Frequencies learned from data are rescaled to fit this many bits.
pub const FREQUENCY_BITS: u32 = 16;
/// Bytes the decoder may read past the end of a well-formed stream.
const MAX_OVERREAD: usize = 7;

/// Static symbol frequencies shared by encoder and decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyModel {
    freqs: Vec<u32>,
    cumulative: Vec<u64>,
}

impl FrequencyModel {
    /// Every symbol of the alphabet must have positive frequency.
    pub fn new(freqs: Vec<u32>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::invalid("frequency model needs a nonempty alphabet"));
        }
        if let Some(i) = freqs.iter().position(|&f| f == 0) {
            return Err(Error::invalid(format!("symbol {i} has zero frequency")));
        }
        let mut cumulative = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cumulative.push(0);
        for &f in &freqs {
            acc += f as u64;
            cumulative.push(acc);
        }
        if acc > MAX_TOTAL {
            return Err(Error::invalid(format!("total frequency {acc} exceeds 2^32")));
        }
        Ok(Self { freqs, cumulative })
    }

    /// Two-pass model: symbol counts over `symbols`, rescaled so each fits
    /// in [`FREQUENCY_BITS`] bits. Unseen symbols get frequency 1.
    pub fn from_symbols(symbols: &[u32], alphabet: u32) -> Result<Self> {
        let mut counts = vec![0u64; alphabet as usize];
        for &s in symbols {
            let slot = counts
                .get_mut(s as usize)
                .ok_or_else(|| Error::invalid(format!("symbol {s} outside alphabet of size {alphabet}")))?;
            *slot += 1;
        }
        let cap = (1u64 << FREQUENCY_BITS) - 1;
        let max = counts.iter().copied().max().unwrap_or(0);
        let freqs = counts
            .iter()
            .map(|&c| {
                let scaled = if max <= cap {
                    c
                } else {
                    (c as u128 * cap as u128 / max as u128) as u64
                };
                scaled.clamp(1, cap) as u32
            })
            .collect();
        Self::new(freqs)
    }

    pub fn alphabet_size(&self) -> usize {
        self.freqs.len()
    }

    pub fn frequencies(&self) -> &[u32] {
        &self.freqs
    }

    pub fn total(&self) -> u64 {
        *self.cumulative.last().unwrap()
    }

    /// Ideal code length of `symbols` under this model, in bits.
    pub fn cost_bits(&self, symbols: &[u32]) -> Result<f64> {
        let total = self.total() as f64;
        symbols
            .iter()
            .map(|&s| {
                let f = *self
                    .freqs
                    .get(s as usize)
                    .ok_or_else(|| Error::invalid(format!("symbol {s} outside alphabet")))?;
                Ok(-(f as f64 / total).log2())
            })
            .sum()
    }

    fn interval(&self, s: u32) -> Option<(u64, u64)> {
        let f = *self.freqs.get(s as usize)?;
        Some((self.cumulative[s as usize], f as u64))
    }

    fn symbol_for(&self, target: u64) -> usize {
        self.cumulative.partition_point(|&c| c <= target) - 1
    }
}

struct Encoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Encoder {
    fn new() -> Self {
        Self {
            low: 0,
            range: u64::MAX,
            out: Vec::new(),
        }
    }

    fn propagate_carry(&mut self) {
        for byte in self.out.iter_mut().rev() {
            let (b, overflow) = byte.overflowing_add(1);
            *byte = b;
            if !overflow {
                return;
            }
        }
        unreachable!("carry out of the first output byte");
    }

    fn encode(&mut self, cum: u64, freq: u64, total: u64) {
        let r = self.range / total;
        let offset = r * cum;
        let (low, carry) = self.low.overflowing_add(offset);
        self.low = low;
        if carry {
            self.propagate_carry();
        }
        // the last symbol absorbs the division remainder
        self.range = if cum + freq == total {
            self.range - offset
        } else {
            r * freq
        };
        while self.range < TOP {
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        // smallest multiple of 2^56 inside [low, low + range)
        let (x, carry) = self.low.overflowing_add(TOP - 1);
        if carry {
            self.propagate_carry();
        }
        self.out.push((x >> 56) as u8);
        self.out
    }
}

/// Encodes `symbols` under `model`.
pub fn arith_encode(symbols: &[u32], model: &FrequencyModel) -> Result<Vec<u8>> {
    let total = model.total();
    let mut enc = Encoder::new();
    for &s in symbols {
        let (cum, freq) = model
            .interval(s)
            .ok_or_else(|| Error::invalid(format!("symbol {s} outside alphabet of size {}", model.alphabet_size())))?;
        enc.encode(cum, freq, total);
    }
    Ok(enc.finish())
}

struct Decoder<'a> {
    input: &'a [u8],
    pos: usize,
    value: u64,
    range: u64,
}

impl<'a> Decoder<'a> {
    fn new(input: &'a [u8]) -> Result<Self> {
        let mut dec = Self {
            input,
            pos: 0,
            value: 0,
            range: u64::MAX,
        };
        for _ in 0..8 {
            dec.value = (dec.value << 8) | dec.next_byte()? as u64;
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = self.input.get(self.pos).copied();
        self.pos += 1;
        match b {
            Some(b) => Ok(b),
            None if self.pos <= self.input.len() + MAX_OVERREAD => Ok(0),
            None => Err(Error::Decode("truncated arithmetic-coded stream".into())),
        }
    }

    fn decode(&mut self, model: &FrequencyModel) -> Result<u32> {
        let total = model.total();
        let r = self.range / total;
        let target = (self.value / r).min(total - 1);
        let s = model.symbol_for(target);
        let (cum, freq) = model.interval(s as u32).unwrap();
        let offset = r * cum;
        self.value -= offset;
        self.range = if cum + freq == total {
            self.range - offset
        } else {
            r * freq
        };
        if self.value >= self.range {
            return Err(Error::Decode("corrupt arithmetic-coded stream".into()));
        }
        while self.range < TOP {
            self.value = (self.value << 8) | self.next_byte()? as u64;
            self.range <<= 8;
        }
        Ok(s as u32)
    }
}

/// Decodes exactly `count` symbols.
pub fn arith_decode(bytes: &[u8], model: &FrequencyModel, count: usize) -> Result<Vec<u32>> {
    if bytes.is_empty() {
        return Err(Error::Decode("empty arithmetic-coded stream".into()));
    }
    let mut dec = Decoder::new(bytes)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(dec.decode(model)?);
    }
    if dec.pos > bytes.len() + MAX_OVERREAD {
        return Err(Error::Decode("truncated arithmetic-coded stream".into()));
    }
    Ok(out)
}
