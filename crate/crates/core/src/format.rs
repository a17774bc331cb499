//! Trace file formats.
//!
//! # Text
//!
//! JSON lines. The first line is the header
//! `{"format":"rtrc","version":1,"V":…,"m":…,"model_id":…,"tracked_k":[…],"subsample_seed":…}`,
//! every following line one record `{"p":…,"rank":…,"doc_start":…,"alpha":…}`
//! where all but `p` are optional (`doc_start` defaults to false).
//! Floats are written in shortest round-trip decimal form, so text and
//! binary forms convert losslessly. Blank lines are ignored.
//!
//! # Binary
//!
//! Little-endian throughout.
//!
//! ```text
//! magic "RTRC" | version u16 | V u32 | m u64 | n u64
//! tracked_k count u16 | tracked_k u32 × count
//! seed present u8 | seed u64
//! model_id length u32 | model_id utf-8
//! alpha column u8
//! n × record: p f64 | rank u32 (0 = untracked) | flags u8 [| alpha f64]
//! ```
//!
//! Record flags: bit 0 document start, bit 1 alpha present. With the alpha
//! column enabled every record carries the 8-byte alpha slot (zero when
//! absent), so records stay fixed-width.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{RiskRecord, RiskTrace, TraceHeader};

pub const TRACE_MAGIC: &[u8; 4] = b"RTRC";
pub const TRACE_VERSION: u16 = 1;
const FORMAT_NAME: &str = "rtrc";

const FLAG_DOC_START: u8 = 1;
const FLAG_ALPHA: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    Text,
    Binary,
}

#[derive(Serialize, Deserialize)]
struct TextHeader {
    #[serde(default = "default_format")]
    format: String,
    #[serde(default = "default_version")]
    version: u16,
    #[serde(rename = "V")]
    vocab_size: u32,
    m: u64,
    #[serde(default)]
    model_id: String,
    #[serde(default)]
    tracked_k: Vec<u32>,
    #[serde(default)]
    subsample_seed: Option<u64>,
}

fn default_format() -> String {
    FORMAT_NAME.to_string()
}

fn default_version() -> u16 {
    TRACE_VERSION
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextRecord {
    p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rank: Option<u32>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    doc_start: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn write_trace_text(trace: &RiskTrace, mut w: impl Write) -> Result<()> {
    let h = &trace.header;
    let header = TextHeader {
        format: default_format(),
        version: TRACE_VERSION,
        vocab_size: h.vocab_size,
        m: h.total_tokens,
        model_id: h.model_id.clone(),
        tracked_k: h.tracked_k.clone(),
        subsample_seed: h.subsample_seed,
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::Io(e.into()))?;
    w.write_all(b"\n")?;
    for r in &trace.records {
        let rec = TextRecord {
            p: r.p_true,
            rank: r.topk_rank,
            doc_start: r.doc_start,
            alpha: r.alpha,
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace_text(r: impl BufRead) -> Result<RiskTrace> {
    let mut header: Option<TraceHeader> = None;
    let mut records = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match &header {
            None => {
                let h: TextHeader =
                    serde_json::from_str(line).map_err(|e| parse_err(lineno, format!("bad header: {e}")))?;
                if h.format != FORMAT_NAME || h.version != TRACE_VERSION {
                    return Err(parse_err(
                        lineno,
                        format!("unsupported trace format {} version {}", h.format, h.version),
                    ));
                }
                header = Some(TraceHeader {
                    vocab_size: h.vocab_size,
                    total_tokens: h.m,
                    model_id: h.model_id,
                    tracked_k: h.tracked_k,
                    subsample_seed: h.subsample_seed,
                });
            }
            Some(_) => {
                let rec: TextRecord =
                    serde_json::from_str(line).map_err(|e| parse_err(lineno, format!("bad record: {e}")))?;
                let record = RiskRecord {
                    p_true: rec.p,
                    topk_rank: rec.rank,
                    doc_start: rec.doc_start,
                    alpha: rec.alpha,
                };
                check_record(&record).map_err(|m| parse_err(lineno, m))?;
                records.push(record);
            }
        }
    }
    let header = header.ok_or_else(|| parse_err(1, "missing header line"))?;
    RiskTrace::new(header, records)
}

/// Per-record checks, so malformed files report the offending line.
fn check_record(r: &RiskRecord) -> std::result::Result<(), String> {
    if !(r.p_true > 0.0 && r.p_true <= 1.0) {
        return Err(format!("probability {} outside (0, 1]", r.p_true));
    }
    if r.topk_rank == Some(0) {
        return Err("ranks are 1-based".into());
    }
    if let Some(a) = r.alpha {
        if !(a > 0.0 && a <= 1.0) {
            return Err(format!("alpha {a} outside (0, 1]"));
        }
    }
    Ok(())
}

pub fn write_trace_binary(trace: &RiskTrace, mut w: impl Write) -> Result<()> {
    let h = &trace.header;
    w.write_all(TRACE_MAGIC)?;
    w.write_all(&TRACE_VERSION.to_le_bytes())?;
    w.write_all(&h.vocab_size.to_le_bytes())?;
    w.write_all(&h.total_tokens.to_le_bytes())?;
    w.write_all(&(trace.records.len() as u64).to_le_bytes())?;
    let k_count = u16::try_from(h.tracked_k.len()).map_err(|_| Error::invalid("too many tracked k values"))?;
    w.write_all(&k_count.to_le_bytes())?;
    for k in &h.tracked_k {
        w.write_all(&k.to_le_bytes())?;
    }
    w.write_all(&[h.subsample_seed.is_some() as u8])?;
    w.write_all(&h.subsample_seed.unwrap_or(0).to_le_bytes())?;
    let id = h.model_id.as_bytes();
    w.write_all(&(id.len() as u32).to_le_bytes())?;
    w.write_all(id)?;
    let alpha_column = trace.records.iter().any(|r| r.alpha.is_some());
    w.write_all(&[alpha_column as u8])?;
    for r in &trace.records {
        w.write_all(&r.p_true.to_le_bytes())?;
        w.write_all(&r.topk_rank.unwrap_or(0).to_le_bytes())?;
        let flags = if r.doc_start { FLAG_DOC_START } else { 0 } | if r.alpha.is_some() { FLAG_ALPHA } else { 0 };
        w.write_all(&[flags])?;
        if alpha_column {
            w.write_all(&r.alpha.unwrap_or(0.0).to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Decode(format!("binary trace truncated while reading {what}")))?;
        Ok(buf)
    }
}

pub fn read_trace_binary(r: impl Read) -> Result<RiskTrace> {
    let mut c = Cursor { inner: r };
    if &c.take::<4>("magic")? != TRACE_MAGIC {
        return Err(Error::Decode("not a binary trace (bad magic)".into()));
    }
    let version = u16::from_le_bytes(c.take("version")?);
    if version != TRACE_VERSION {
        return Err(Error::Decode(format!("unsupported binary trace version {version}")));
    }
    let vocab_size = u32::from_le_bytes(c.take("V")?);
    let total_tokens = u64::from_le_bytes(c.take("m")?);
    let n = u64::from_le_bytes(c.take("n")?);
    let k_count = u16::from_le_bytes(c.take("tracked_k count")?);
    let tracked_k = (0..k_count)
        .map(|_| c.take("tracked_k").map(u32::from_le_bytes))
        .collect::<Result<Vec<_>>>()?;
    let has_seed = c.take::<1>("seed flag")?[0] != 0;
    let seed = u64::from_le_bytes(c.take("seed")?);
    let id_len = u32::from_le_bytes(c.take("model_id length")?) as usize;
    let mut id = vec![0u8; id_len];
    c.inner
        .read_exact(&mut id)
        .map_err(|_| Error::Decode("binary trace truncated while reading model_id".into()))?;
    let model_id = String::from_utf8(id).map_err(|_| Error::Decode("model_id is not utf-8".into()))?;
    let alpha_column = c.take::<1>("alpha column flag")?[0] != 0;
    let mut records = Vec::with_capacity(n.min(1 << 24) as usize);
    for i in 0..n {
        let p_true = f64::from_le_bytes(c.take("record")?);
        let rank = u32::from_le_bytes(c.take("record")?);
        let flags = c.take::<1>("record")?[0];
        let alpha_slot = if alpha_column {
            Some(f64::from_le_bytes(c.take("record")?))
        } else {
            None
        };
        let record = RiskRecord {
            p_true,
            topk_rank: (rank != 0).then_some(rank),
            doc_start: flags & FLAG_DOC_START != 0,
            alpha: alpha_slot.filter(|_| flags & FLAG_ALPHA != 0),
        };
        check_record(&record).map_err(|m| Error::Decode(format!("record {i}: {m}")))?;
        records.push(record);
    }
    let mut rest = [0u8; 1];
    if c.inner.read(&mut rest)? != 0 {
        return Err(Error::Decode("trailing bytes after the last record".into()));
    }
    RiskTrace::new(
        TraceHeader {
            vocab_size,
            total_tokens,
            model_id,
            tracked_k,
            subsample_seed: has_seed.then_some(seed),
        },
        records,
    )
}

pub fn write_trace(trace: &RiskTrace, format: TraceFormat, w: impl Write) -> Result<()> {
    match format {
        TraceFormat::Text => write_trace_text(trace, w),
        TraceFormat::Binary => write_trace_binary(trace, w),
    }
}

/// Reads either form, detected from the leading magic bytes.
pub fn read_trace(r: impl Read) -> Result<(RiskTrace, TraceFormat)> {
    let mut r = BufReader::new(r);
    let head = r.fill_buf()?;
    if head.starts_with(TRACE_MAGIC) {
        Ok((read_trace_binary(r)?, TraceFormat::Binary))
    } else {
        Ok((read_trace_text(r)?, TraceFormat::Text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RiskTrace {
        RiskTrace::new(
            TraceHeader {
                vocab_size: 50257,
                total_tokens: 1000,
                model_id: "toy \"quoted\"".into(),
                tracked_k: vec![1, 10, 100],
                subsample_seed: Some(17),
            },
            vec![
                RiskRecord::new(0.1 + 0.2, Some(3), false),
                RiskRecord {
                    p_true: 1e-300,
                    topk_rank: None,
                    doc_start: true,
                    alpha: Some(0.25),
                },
                RiskRecord::new(1.0, Some(1), false),
            ],
        )
        .unwrap()
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let t = sample();
        let mut buf = Vec::new();
        write_trace_text(&t, &mut buf).unwrap();
        let back = read_trace_text(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().contains("\"V\":50257"));
        assert!(text.contains("{\"p\":1.0,\"rank\":1}"));
    }

    #[test]
    fn binary_round_trip_is_lossless() {
        let t = sample();
        let mut buf = Vec::new();
        write_trace_binary(&t, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"RTRC");
        let (back, fmt) = read_trace(buf.as_slice()).unwrap();
        assert_eq!(fmt, TraceFormat::Binary);
        assert_eq!(back, t);
        // fixed-width records
        let mut no_alpha = t.clone();
        no_alpha.records[1].alpha = None;
        let mut b2 = Vec::new();
        write_trace_binary(&no_alpha, &mut b2).unwrap();
        assert_eq!(buf.len() - b2.len(), 3 * 8);
    }

    #[test]
    fn binary_layout_header() {
        let t = sample();
        let mut buf = Vec::new();
        write_trace_binary(&t, &mut buf).unwrap();
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        assert_eq!(u32::from_le_bytes(buf[6..10].try_into().unwrap()), 50257);
        assert_eq!(u64::from_le_bytes(buf[10..18].try_into().unwrap()), 1000);
        assert_eq!(u64::from_le_bytes(buf[18..26].try_into().unwrap()), 3);
    }

    #[test]
    fn malformed_text_reports_line() {
        let text = "{\"V\":10,\"m\":5}\n{\"p\":0.5}\n\n{\"p\":1.5}\n";
        match read_trace_text(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        match read_trace_text("{\"V\":10,\"m\":5}\n{\"p\":0.5,\"rnk\":2}\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_trace_text("".as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn truncated_binary_fails() {
        let mut buf = Vec::new();
        write_trace_binary(&sample(), &mut buf).unwrap();
        assert!(matches!(
            read_trace_binary(&buf[..buf.len() - 1]),
            Err(Error::Decode(_))
        ));
        buf.push(0);
        assert!(matches!(read_trace_binary(buf.as_slice()), Err(Error::Decode(_))));
    }
}
