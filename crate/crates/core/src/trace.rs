//! Per-token risk traces.
//!
//! A [`RiskTrace`] is the only thing the bound computation ever sees of a
//! model: for each certified (or subsampled) position it stores the
//! probability the unsmoothed model gave the realized token, the rank of that
//! token in the model's next-token ordering, and whether the position opens a
//! new document.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    /// Vocabulary size `V`.
    pub vocab_size: u32,
    /// Length `m` of the full certified token sequence.
    pub total_tokens: u64,
    pub model_id: String,
    /// Sorted list of `k` values for which ranks are meaningful.
    pub tracked_k: Vec<u32>,
    /// Seed of the permutation used to draw the records, if subsampled.
    pub subsample_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskRecord {
    /// Pre-smoothing probability of the realized token.
    pub p_true: f64,
    /// 1-based rank of the realized token, `None` when beyond `max(tracked_k)`.
    pub topk_rank: Option<u32>,
    pub doc_start: bool,
    /// Smoothing rate chosen by an exporter-side head, if any.
    pub alpha: Option<f64>,
}

impl RiskRecord {
    pub fn new(p_true: f64, topk_rank: Option<u32>, doc_start: bool) -> Self {
        Self {
            p_true,
            topk_rank,
            doc_start,
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTrace {
    pub header: TraceHeader,
    pub records: Vec<RiskRecord>,
}

impl RiskTrace {
    /// Builds a trace and checks every invariant.
    pub fn new(header: TraceHeader, records: Vec<RiskRecord>) -> Result<Self> {
        let trace = Self { header, records };
        trace.validate()?;
        Ok(trace)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn vocab_size(&self) -> u32 {
        self.header.vocab_size
    }

    pub fn total_tokens(&self) -> u64 {
        self.header.total_tokens
    }

    pub fn max_tracked_k(&self) -> Option<u32> {
        self.header.tracked_k.last().copied()
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.vocab_size < 2 {
            return Err(Error::invalid(format!(
                "vocabulary size must be at least 2, got {}",
                h.vocab_size
            )));
        }
        if h.total_tokens == 0 {
            return Err(Error::invalid("total token count m must be positive"));
        }
        if self.records.len() as u64 > h.total_tokens {
            return Err(Error::invalid(format!(
                "{} records exceed the certified sequence length m = {}",
                self.records.len(),
                h.total_tokens
            )));
        }
        if h.tracked_k.contains(&0) {
            return Err(Error::invalid("tracked k values must be positive"));
        }
        if h.tracked_k.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("tracked_k must be strictly increasing"));
        }
        for (i, r) in self.records.iter().enumerate() {
            if !(r.p_true > 0.0 && r.p_true <= 1.0) {
                return Err(Error::invalid(format!(
                    "record {i}: p_true = {} outside (0, 1]",
                    r.p_true
                )));
            }
            if r.topk_rank == Some(0) {
                return Err(Error::invalid(format!("record {i}: rank must be >= 1")));
            }
            if let Some(a) = r.alpha {
                if !(a > 0.0 && a <= 1.0) {
                    return Err(Error::invalid(format!("record {i}: alpha = {a} outside (0, 1]")));
                }
            }
        }
        // a subsample need not contain position 0
        if let (Some(first), None) = (self.records.first(), self.header.subsample_seed) {
            if !first.doc_start {
                return Err(Error::invalid("first record must start a document"));
            }
        }
        Ok(())
    }
}

/// Draws `n` distinct positions out of `0..m` as the first `n` entries of a
/// seeded uniformly random permutation, returned in ascending order.
pub fn subsample_positions(m: u64, n: u64, seed: u64) -> Result<Vec<u64>> {
    if n > m {
        return Err(Error::invalid(format!(
            "subsample size n = {n} exceeds sequence length m = {m}"
        )));
    }
    let m = usize::try_from(m).map_err(|_| Error::invalid("m does not fit in usize"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<u64> = index::sample(&mut rng, m, n as usize)
        .into_iter()
        .map(|i| i as u64)
        .collect();
    picked.sort_unstable();
    Ok(picked)
}
