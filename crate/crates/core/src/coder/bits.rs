//! MSB-first bit packing.

use crate::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn write(&mut self, value: u64, width: u8) {
        debug_assert!(width <= 64);
        for i in (0..width).rev() {
            let bit = (value >> i) & 1;
            let idx = (self.bits / 8) as usize;
            if idx == self.bytes.len() {
                self.bytes.push(0);
            }
            self.bytes[idx] |= (bit as u8) << (7 - self.bits % 8);
            self.bits += 1;
        }
    }

    /// LEB128-style variable-length integer: 7 payload bits per byte, high
    /// bit set on every byte but the last.
    pub fn write_varint(&mut self, mut value: u64) {
        loop {
            let low = value & 0x7f;
            value >>= 7;
            if value == 0 {
                self.write(low, 8);
                return;
            }
            self.write(low | 0x80, 8);
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.bits
    }

    pub fn into_bytes(self) -> (Vec<u8>, u64) {
        (self.bytes, self.bits)
    }
}

/// Bits used by [`BitWriter::write_varint`].
pub fn varint_bits(value: u64) -> u64 {
    let significant = 64 - value.leading_zeros() as u64;
    8 * significant.div_ceil(7).max(1)
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
    limit: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], bit_len: u64) -> Self {
        Self {
            bytes,
            pos: 0,
            limit: bit_len.min(bytes.len() as u64 * 8),
        }
    }

    pub fn read(&mut self, width: u8) -> Result<u64> {
        if self.pos + width as u64 > self.limit {
            return Err(Error::Decode("bit stream exhausted".into()));
        }
        let mut v = 0u64;
        for _ in 0..width {
            let byte = self.bytes[(self.pos / 8) as usize];
            let bit = (byte >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u64;
            self.pos += 1;
        }
        Ok(v)
    }

    pub fn read_varint(&mut self) -> Result<u64> {
        let mut value = 0u64;
        for shift in (0..64).step_by(7) {
            let byte = self.read(8)?;
            value |= (byte & 0x7f) << shift;
            if byte & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(Error::Decode("varint longer than 64 bits".into()))
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn varint_lengths() {
        assert_eq!(varint_bits(0), 8);
        assert_eq!(varint_bits(127), 8);
        assert_eq!(varint_bits(128), 16);
        assert_eq!(varint_bits(50_256), 24);
        assert_eq!(varint_bits(u64::MAX), 80);
    }

    #[test]
    fn mixed_round_trip() {
        let mut w = BitWriter::new();
        w.write(0b101, 3);
        w.write_varint(300);
        w.write(0xbeef, 16);
        w.write_varint(u64::MAX);
        let (bytes, bits) = w.into_bytes();
        assert_eq!(bits, 3 + 16 + 16 + 80);
        let mut r = BitReader::new(&bytes, bits);
        assert_eq!(r.read(3).unwrap(), 0b101);
        assert_eq!(r.read_varint().unwrap(), 300);
        assert_eq!(r.read(16).unwrap(), 0xbeef);
        assert_eq!(r.read_varint().unwrap(), u64::MAX);
        assert_eq!(r.remaining(), 0);
        assert!(r.read(1).is_err());
    }
}
