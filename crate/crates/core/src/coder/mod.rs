//! Compressed hypothesis descriptions and their size `C(h)` in bits.
//!
//! A [`CompressedArtifact`] holds a self-delimiting payload plus a list of
//! fixed-width [`HeaderField`]s for every discrete choice made before the
//! payload can be decoded (quantization levels, parametrization, seeds,
//! ...). `C(h)` is the payload size plus the sum of the header field widths.
//!
//! # Arithmetic payload layout
//!
//! | bytes        | content                                         |
//! |--------------|-------------------------------------------------|
//! | `2·L`        | symbol frequencies, `u16` little-endian         |
//! | 8            | codebook minimum, `f64` little-endian           |
//! | 8            | codebook maximum, `f64` little-endian           |
//! | rest         | range-coded symbols                             |
//!
//! `L` (levels) and the symbol count are header fields.
//!
//! # File layout
//!
//! ```text
//! magic "CART" | version u16 | scheme u8 | field count u16
//! per field: name length u8 | name utf-8 | width u8 | value u64
//! symbol count u64 | payload bits u64 | payload length u32 | payload
//! ```
//!
//! All integers are little-endian.

pub mod arith;
pub mod bits;
pub mod deflate;
pub mod quantize;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use arith::{arith_decode, arith_encode, FrequencyModel};
pub use deflate::{deflate_size, gzip_bytes};
pub use quantize::{quantize_uniform, Quantized};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CART";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Quantized symbols under a two-pass static arithmetic code.
    Arithmetic,
    /// Gzip-compressed bytes (externally quantized checkpoints).
    Deflate,
    /// A payload that is already a prefix-free code (e.g. a sparse count
    /// table), stored verbatim.
    Stored,
}

impl Scheme {
    fn tag(self) -> u8 {
        match self {
            Scheme::Arithmetic => 0,
            Scheme::Deflate => 1,
            Scheme::Stored => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Scheme::Arithmetic),
            1 => Ok(Scheme::Deflate),
            2 => Ok(Scheme::Stored),
            t => Err(Error::Decode(format!("unknown scheme tag {t}"))),
        }
    }
}

/// A fixed-width integer describing one hyperparameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderField {
    pub name: String,
    pub width_bits: u8,
    pub value: u64,
}

impl HeaderField {
    pub fn new(name: impl Into<String>, width_bits: u8, value: u64) -> Result<Self> {
        let name = name.into();
        if width_bits == 0 || width_bits > 64 {
            return Err(Error::invalid(format!(
                "field {name}: width {width_bits} outside 1..=64"
            )));
        }
        if width_bits < 64 && value >> width_bits != 0 {
            return Err(Error::invalid(format!(
                "field {name}: value {value} does not fit in {width_bits} bits"
            )));
        }
        if name.len() > u8::MAX as usize {
            return Err(Error::invalid("field name longer than 255 bytes"));
        }
        Ok(Self {
            name,
            width_bits,
            value,
        })
    }

    /// A 64-bit field carrying the bit pattern of a float.
    pub fn float(name: impl Into<String>, value: f64) -> Self {
        Self::new(name, 64, value.to_bits()).expect("64-bit fields always fit")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedArtifact {
    pub scheme: Scheme,
    pub header: Vec<HeaderField>,
    pub symbol_count: u64,
    pub payload_bits: u64,
    pub payload: Vec<u8>,
}

impl CompressedArtifact {
    /// Codes a quantized tensor. `levels` and `symbol_count` are appended to
    /// `header`.
    pub fn arithmetic(quantized: &Quantized, mut header: Vec<HeaderField>) -> Result<Self> {
        let model = FrequencyModel::from_symbols(&quantized.symbols, quantized.levels)?;
        let coded = arith_encode(&quantized.symbols, &model)?;
        let mut payload = Vec::with_capacity(2 * model.alphabet_size() + 16 + coded.len());
        for &f in model.frequencies() {
            payload.extend_from_slice(&(f as u16).to_le_bytes());
        }
        payload.extend_from_slice(&quantized.min().to_le_bytes());
        payload.extend_from_slice(&quantized.max().to_le_bytes());
        payload.extend_from_slice(&coded);
        header.push(HeaderField::new("levels", 32, quantized.levels as u64)?);
        header.push(HeaderField::new("symbol_count", 64, quantized.symbols.len() as u64)?);
        Ok(Self {
            scheme: Scheme::Arithmetic,
            header,
            symbol_count: quantized.symbols.len() as u64,
            payload_bits: payload.len() as u64 * 8,
            payload,
        })
    }

    /// Gzips `bytes` with the pinned setting, recorded in the header.
    pub fn deflate(bytes: &[u8], mut header: Vec<HeaderField>) -> Result<Self> {
        let payload = gzip_bytes(bytes);
        header.push(HeaderField::new("deflate_level", 4, deflate::DEFLATE_LEVEL as u64)?);
        header.push(HeaderField::new(
            "deflate_window_bits",
            4,
            deflate::DEFLATE_WINDOW_BITS as u64,
        )?);
        Ok(Self {
            scheme: Scheme::Deflate,
            header,
            symbol_count: bytes.len() as u64,
            payload_bits: payload.len() as u64 * 8,
            payload,
        })
    }

    /// Wraps a payload that is already a code of `payload_bits` bits.
    pub fn stored(payload: Vec<u8>, payload_bits: u64, symbol_count: u64, header: Vec<HeaderField>) -> Result<Self> {
        if payload_bits > payload.len() as u64 * 8 {
            return Err(Error::invalid("payload shorter than its declared bit length"));
        }
        Ok(Self {
            scheme: Scheme::Stored,
            header,
            symbol_count,
            payload_bits,
            payload,
        })
    }

    pub fn header_bits(&self) -> u64 {
        self.header.iter().map(|f| f.width_bits as u64).sum()
    }

    /// `C(h)`: payload plus header.
    pub fn total_bits(&self) -> u64 {
        self.payload_bits + self.header_bits()
    }

    pub fn field(&self, name: &str) -> Option<u64> {
        self.header.iter().find(|f| f.name == name).map(|f| f.value)
    }

    /// Recovers the quantized tensor from an arithmetic artifact.
    pub fn decode_quantized(&self) -> Result<Quantized> {
        if self.scheme != Scheme::Arithmetic {
            return Err(Error::Decode("artifact is not arithmetic-coded".into()));
        }
        let levels = self
            .field("levels")
            .ok_or_else(|| Error::Decode("missing levels field".into()))? as u32;
        let table = 2 * levels as usize;
        if self.payload.len() < table + 16 {
            return Err(Error::Decode("payload too short for its frequency table".into()));
        }
        let freqs = self.payload[..table]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
            .collect();
        let model = FrequencyModel::new(freqs).map_err(|e| Error::Decode(e.to_string()))?;
        let min = f64::from_le_bytes(self.payload[table..table + 8].try_into().unwrap());
        let max = f64::from_le_bytes(self.payload[table + 8..table + 16].try_into().unwrap());
        let symbols = arith_decode(&self.payload[table + 16..], &model, self.symbol_count as usize)?;
        Quantized::from_parts(symbols, min, max, levels)
    }

    /// Original bytes of a deflate artifact.
    pub fn inflate(&self) -> Result<Vec<u8>> {
        if self.scheme != Scheme::Deflate {
            return Err(Error::Decode("artifact is not deflate-coded".into()));
        }
        deflate::gunzip_bytes(&self.payload)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.scheme.tag());
        out.extend_from_slice(&(self.header.len() as u16).to_le_bytes());
        for f in &self.header {
            out.push(f.name.len() as u8);
            out.extend_from_slice(f.name.as_bytes());
            out.push(f.width_bits);
            out.extend_from_slice(&f.value.to_le_bytes());
        }
        out.extend_from_slice(&self.symbol_count.to_le_bytes());
        out.extend_from_slice(&self.payload_bits.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Decode("not a compressed artifact (bad magic)".into()));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != VERSION {
            return Err(Error::Decode(format!("unsupported artifact version {version}")));
        }
        let scheme = Scheme::from_tag(read_array::<1>(&mut r)?[0])?;
        let fields = u16::from_le_bytes(read_array(&mut r)?);
        let mut header = Vec::with_capacity(fields as usize);
        for _ in 0..fields {
            let len = read_array::<1>(&mut r)?[0] as usize;
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Decode("field name is not utf-8".into()))?;
            let width = read_array::<1>(&mut r)?[0];
            let value = u64::from_le_bytes(read_array(&mut r)?);
            header.push(HeaderField::new(name, width, value).map_err(|e| Error::Decode(e.to_string()))?);
        }
        let symbol_count = u64::from_le_bytes(read_array(&mut r)?);
        let payload_bits = u64::from_le_bytes(read_array(&mut r)?);
        let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut payload = vec![0u8; len];
        read_exact(&mut r, &mut payload)?;
        if !r.is_empty() {
            return Err(Error::Decode("trailing bytes after artifact payload".into()));
        }
        Ok(Self {
            scheme,
            header,
            symbol_count,
            payload_bits,
            payload,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Decode("artifact truncated".into()))
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

/// `C(h)` for an artifact plus additional hyperparameter fields.
pub fn total_compressed_bits(artifact: &CompressedArtifact, hyperparams: &[HeaderField]) -> u64 {
    artifact.total_bits() + hyperparams.iter().map(|f| f.width_bits as u64).sum::<u64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CompressedArtifact {
        let w: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64 / 7.0 - 3.0).collect();
        let q = quantize_uniform(&w, 8).unwrap();
        CompressedArtifact::arithmetic(&q, vec![HeaderField::new("seed", 64, 42).unwrap()]).unwrap()
    }

    #[test]
    fn header_accounting() {
        let art = CompressedArtifact::stored(vec![1, 2, 3], 24, 3, vec![]).unwrap();
        assert_eq!(total_compressed_bits(&art, &[]), 24);
        let extra = [HeaderField::new("rank", 32, 4).unwrap()];
        assert_eq!(total_compressed_bits(&art, &extra), 56);
        let art = sample();
        assert_eq!(art.header_bits(), 64 + 32 + 64);
        assert_eq!(art.total_bits(), art.payload_bits + 160);
    }

    #[test]
    fn header_field_width_checked() {
        assert!(HeaderField::new("x", 4, 16).is_err());
        assert!(HeaderField::new("x", 4, 15).is_ok());
        assert!(HeaderField::new("x", 0, 0).is_err());
        assert!(HeaderField::new("x", 64, u64::MAX).is_ok());
    }

    #[test]
    fn arithmetic_artifact_round_trip() {
        let w: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64 / 7.0 - 3.0).collect();
        let q = quantize_uniform(&w, 8).unwrap();
        let art = CompressedArtifact::arithmetic(&q, vec![]).unwrap();
        assert_eq!(art.decode_quantized().unwrap(), q);
        let back = CompressedArtifact::from_bytes(&art.to_bytes()).unwrap();
        assert_eq!(back, art);
    }

    #[test]
    fn deflate_artifact_round_trip() {
        let bytes = b"abcabcabcabcabc".repeat(50);
        let art = CompressedArtifact::deflate(&bytes, vec![]).unwrap();
        assert_eq!(art.payload_bits, deflate_size(&bytes));
        assert_eq!(art.inflate().unwrap(), bytes);
        assert_eq!(art.field("deflate_level"), Some(9));
    }

    #[test]
    fn rejects_corrupt_files() {
        let bytes = sample().to_bytes();
        assert!(CompressedArtifact::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(CompressedArtifact::from_bytes(&bad).is_err());
        let mut longer = bytes;
        longer.push(0);
        assert!(CompressedArtifact::from_bytes(&longer).is_err());
    }
}
