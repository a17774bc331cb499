//! Size of a byte buffer after general-purpose compression.
//!
//! Buffers are wrapped in a gzip container (RFC 1952) with a zeroed
//! modification time and no file name, compressed by zlib at level 9 with
//! the default strategy and a 32 KiB window. These settings are part of the
//! coding scheme and are recorded in artifact headers; changing any of them
//! changes every reported size.

use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::{Compression, GzBuilder};

use crate::error::Result;

pub const DEFLATE_LEVEL: u32 = 9;
pub const DEFLATE_WINDOW_BITS: u32 = 15;
/// Bytes of gzip framing around the DEFLATE stream (10-byte header plus
/// 8-byte trailer).
pub const GZIP_FRAMING_BYTES: usize = 18;

/// Compresses `bytes` with the pinned setting.
pub fn gzip_bytes(bytes: &[u8]) -> Vec<u8> {
    let mut enc = GzBuilder::new().mtime(0).operating_system(255).write(
        Vec::with_capacity(bytes.len() / 2 + 64),
        Compression::new(DEFLATE_LEVEL),
    );
    enc.write_all(bytes).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail")
}

pub fn gunzip_bytes(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    GzDecoder::new(bytes).read_to_end(&mut out)?;
    Ok(out)
}

/// Compressed size of `bytes` in bits.
pub fn deflate_size(bytes: &[u8]) -> u64 {
    gzip_bytes(bytes).len() as u64 * 8
}
