//! Sparse k-th order Markov chain baseline.
//!
//! Counts are kept only for `(prefix, token)` pairs that occur. Prefixes
//! never reach back across a document boundary; positions with fewer than
//! `k` predecessors in their document are padded on the left with the
//! reserved begin symbol `V`. Counts saturate at `2^count_width − 1` and the
//! chain always predicts from the saturated (stored) counts, so the coded
//! model and the evaluated model coincide.
//!
//! # Stored encoding
//!
//! Entries are written in lexicographic `(prefix, token)` order; each is the
//! `k` prefix tokens and the target token as 7-bit continuation varints,
//! followed by the count in `count_width` bits. The header carries `k`
//! (8 bits), `V` (32), `α` (64, IEEE bits), `count_width` (8) and the entry
//! count (64).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::bound::{evaluate_bpd_bound, evaluate_topk_bound, BoundResult};
use crate::coder::bits::{varint_bits, BitReader, BitWriter};
use crate::coder::{CompressedArtifact, HeaderField};
use crate::corpus::TokenStream;
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::smoothing::{smooth_prob, SmoothingPlan};
use crate::trace::{subsample_positions, RiskRecord, RiskTrace, TraceHeader};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_COUNT_WIDTH: u8 = 16;
/// Header bits: order, vocabulary, alpha, count width, entry count.
pub const HEADER_BITS: u64 = 8 + 32 + 64 + 8 + 64;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixCounts {
    pub total: u64,
    pub next: BTreeMap<u32, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMarkov {
    pub order: usize,
    pub vocab_size: u32,
    pub alpha: f64,
    pub count_width: u8,
    counts: HashMap<Vec<u32>, PrefixCounts>,
}

impl SparseMarkov {
    pub fn new(order: usize, vocab_size: u32, alpha: f64, count_width: u8) -> Result<Self> {
        if vocab_size < 2 || vocab_size == u32::MAX {
            return Err(Error::invalid(format!("unusable vocabulary size {vocab_size}")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha = {alpha} outside (0, 1]")));
        }
        if count_width == 0 || count_width > 32 {
            return Err(Error::invalid(format!("count width {count_width} outside 1..=32")));
        }
        if order > u8::MAX as usize {
            return Err(Error::invalid("order does not fit the 8-bit header field"));
        }
        Ok(Self {
            order,
            vocab_size,
            alpha,
            count_width,
            counts: HashMap::new(),
        })
    }

    /// Trains with the default smoothing (0.1) and 16-bit counts.
    pub fn train(stream: &TokenStream, order: usize) -> Result<Self> {
        Self::train_with(stream, order, DEFAULT_ALPHA, DEFAULT_COUNT_WIDTH)
    }

    pub fn train_with(stream: &TokenStream, order: usize, alpha: f64, count_width: u8) -> Result<Self> {
        let mut model = Self::new(order, stream.vocab_size, alpha, count_width)?;
        model.observe(stream)?;
        Ok(model)
    }

    /// Adds the counts of another stream.
    pub fn observe(&mut self, stream: &TokenStream) -> Result<()> {
        if stream.vocab_size != self.vocab_size {
            return Err(Error::invalid("stream vocabulary differs from the model's"));
        }
        let cap = self.max_count();
        let begins = stream.doc_begins();
        for (i, &t) in stream.tokens.iter().enumerate() {
            let prefix = stream.context(i, begins[i], self.order, self.begin_symbol());
            let entry = self.counts.entry(prefix).or_default();
            let c = entry.next.entry(t).or_insert(0);
            if *c < cap {
                *c += 1;
                entry.total += 1;
            }
        }
        Ok(())
    }

    /// Merges counts trained on another shard (saturating, commutative).
    pub fn merge(&mut self, other: &SparseMarkov) -> Result<()> {
        if other.order != self.order || other.vocab_size != self.vocab_size || other.count_width != self.count_width {
            return Err(Error::invalid("cannot merge chains with different shapes"));
        }
        let cap = self.max_count();
        for (prefix, theirs) in &other.counts {
            let mine = self.counts.entry(prefix.clone()).or_default();
            for (&t, &c) in &theirs.next {
                let slot = mine.next.entry(t).or_insert(0);
                *slot = slot.saturating_add(c).min(cap);
            }
            mine.total = mine.next.values().map(|&c| c as u64).sum();
        }
        Ok(())
    }

    pub fn begin_symbol(&self) -> u32 {
        self.vocab_size
    }

    pub fn max_count(&self) -> u32 {
        if self.count_width == 32 {
            u32::MAX
        } else {
            (1u32 << self.count_width) - 1
        }
    }

    pub fn entry_count(&self) -> usize {
        self.counts.values().map(|p| p.next.len()).sum()
    }

    pub fn prefix_count(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, prefix: &[u32], token: u32) -> u32 {
        self.counts
            .get(prefix)
            .and_then(|p| p.next.get(&token).copied())
            .unwrap_or(0)
    }

    pub fn prefixes(&self) -> impl Iterator<Item = (&Vec<u32>, &PrefixCounts)> {
        self.counts.iter()
    }

    /// Unsmoothed count estimate; `1/V` for an unseen prefix.
    pub fn count_prob(&self, prefix: &[u32], token: u32) -> f64 {
        match self.counts.get(prefix) {
            Some(p) if p.total > 0 => p.next.get(&token).copied().unwrap_or(0) as f64 / p.total as f64,
            _ => 1.0 / self.vocab_size as f64,
        }
    }

    /// Smoothed predictive probability.
    pub fn token_prob(&self, prefix: &[u32], token: u32) -> f64 {
        smooth_prob(self.count_prob(prefix, token), self.alpha, self.vocab_size)
    }

    /// 1-based rank of `token` when the vocabulary is ordered by descending
    /// probability with ties broken by ascending token id.
    pub fn rank(&self, prefix: &[u32], token: u32) -> u32 {
        let Some(p) = self.counts.get(prefix) else {
            return token + 1;
        };
        let mine = p.next.get(&token).copied().unwrap_or(0);
        if mine == 0 {
            // every seen token is more likely; unseen ones tie
            let seen_below = p.next.range(..token).count() as u32;
            return p.next.len() as u32 + (token - seen_below) + 1;
        }
        let better = p
            .next
            .iter()
            .filter(|&(&t, &c)| c > mine || (c == mine && t < token))
            .count();
        better as u32 + 1
    }

    /// Total smoothed negative log-likelihood of `stream` in bits.
    pub fn nll_bits(&self, stream: &TokenStream) -> f64 {
        let begins = stream.doc_begins();
        let losses: Vec<f64> = (0..stream.len())
            .map(|i| {
                let prefix = stream.context(i, begins[i], self.order, self.begin_symbol());
                -self.token_prob(&prefix, stream.tokens[i]).log2()
            })
            .collect();
        pairwise_sum(&losses)
    }

    fn sorted_entries(&self) -> Vec<(&Vec<u32>, u32, u32)> {
        let mut entries: Vec<(&Vec<u32>, u32, u32)> = self
            .counts
            .iter()
            .flat_map(|(prefix, p)| p.next.iter().map(move |(&t, &c)| (prefix, t, c)))
            .collect();
        entries.sort_unstable_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(&b.1)));
        entries
    }

    /// Compressed size `C(h)` in bits.
    pub fn size_bits(&self) -> u64 {
        let per_entry: u64 = self
            .counts
            .iter()
            .map(|(prefix, p)| {
                let key: u64 = prefix.iter().map(|&t| varint_bits(t as u64)).sum();
                p.next
                    .keys()
                    .map(|&t| key + varint_bits(t as u64) + self.count_width as u64)
                    .sum::<u64>()
            })
            .sum();
        HEADER_BITS + per_entry
    }

    pub fn header_fields(&self) -> Vec<HeaderField> {
        vec![
            HeaderField::new("order", 8, self.order as u64).unwrap(),
            HeaderField::new("vocab_size", 32, self.vocab_size as u64).unwrap(),
            HeaderField::float("alpha", self.alpha),
            HeaderField::new("count_width", 8, self.count_width as u64).unwrap(),
            HeaderField::new("entries", 64, self.entry_count() as u64).unwrap(),
        ]
    }

    pub fn to_artifact(&self) -> CompressedArtifact {
        let mut w = BitWriter::new();
        for (prefix, t, c) in self.sorted_entries() {
            for &p in prefix {
                w.write_varint(p as u64);
            }
            w.write_varint(t as u64);
            w.write(c as u64, self.count_width);
        }
        let entries = self.entry_count() as u64;
        let (bytes, bits) = w.into_bytes();
        CompressedArtifact::stored(bytes, bits, entries, self.header_fields()).expect("bit length matches payload")
    }

    pub fn from_artifact(art: &CompressedArtifact) -> Result<Self> {
        let field = |name: &str| {
            art.field(name)
                .ok_or_else(|| Error::Decode(format!("missing header field {name}")))
        };
        let order = field("order")? as usize;
        let vocab = field("vocab_size")? as u32;
        let alpha = f64::from_bits(field("alpha")?);
        let width = field("count_width")? as u8;
        let entries = field("entries")?;
        let mut model = Self::new(order, vocab, alpha, width).map_err(|e| Error::Decode(e.to_string()))?;
        let mut r = BitReader::new(&art.payload, art.payload_bits);
        for _ in 0..entries {
            let prefix = (0..order)
                .map(|_| r.read_varint().map(|v| v as u32))
                .collect::<Result<Vec<_>>>()?;
            let t = r.read_varint()? as u32;
            let c = r.read(width)? as u32;
            let p = model.counts.entry(prefix).or_default();
            p.next.insert(t, c);
            p.total += c as u64;
        }
        if r.remaining() != 0 {
            return Err(Error::Decode("trailing bits after the last entry".into()));
        }
        Ok(model)
    }

    /// Trace over the given positions of `stream` (held-in evaluation).
    pub fn trace(
        &self,
        stream: &TokenStream,
        positions: &[u64],
        tracked_k: Vec<u32>,
        seed: Option<u64>,
    ) -> Result<RiskTrace> {
        let max_k = tracked_k.last().copied().unwrap_or(0);
        let mut records = Vec::with_capacity(positions.len());
        for &pos in positions {
            let i = pos as usize;
            if i >= stream.len() {
                return Err(Error::invalid(format!("position {i} outside the stream")));
            }
            let begin = stream.doc_begin(i);
            let prefix = stream.context(i, begin, self.order, self.begin_symbol());
            let t = stream.tokens[i];
            let p = self.count_prob(&prefix, t);
            if p <= 0.0 {
                return Err(Error::invalid(format!(
                    "position {i}: token never seen after its prefix; evaluate on training positions"
                )));
            }
            let rank = self.rank(&prefix, t);
            records.push(RiskRecord {
                p_true: p,
                topk_rank: (rank <= max_k).then_some(rank),
                doc_start: stream.doc_start[i],
                alpha: None,
            });
        }
        RiskTrace::new(
            TraceHeader {
                vocab_size: self.vocab_size,
                total_tokens: stream.len() as u64,
                model_id: format!("markov-k{}", self.order),
                tracked_k,
                subsample_seed: seed,
            },
            records,
        )
    }
}

/// Outcome of [`markov_bound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovBound {
    pub order: usize,
    pub entries: usize,
    pub size_bits: u64,
    pub bpd: BoundResult,
    pub topk: Vec<BoundResult>,
}

pub const MARKOV_TRACKED_K: [u32; 3] = [1, 10, 100];

/// Trains an order-`k` chain on `corpus`, sizes it, and certifies it on a
/// seeded subsample of `n_subsample` training positions.
pub fn markov_bound(
    corpus: &TokenStream,
    order: usize,
    delta: f64,
    n_subsample: u64,
    seed: u64,
) -> Result<MarkovBound> {
    let model = SparseMarkov::train(corpus, order)?;
    markov_bound_for(&model, corpus, delta, n_subsample, seed)
}

pub fn markov_bound_for(
    model: &SparseMarkov,
    corpus: &TokenStream,
    delta: f64,
    n_subsample: u64,
    seed: u64,
) -> Result<MarkovBound> {
    let m = corpus.len() as u64;
    let n = n_subsample.min(m);
    let positions = subsample_positions(m, n, seed)?;
    let tracked: Vec<u32> = MARKOV_TRACKED_K
        .iter()
        .copied()
        .filter(|&k| k < model.vocab_size)
        .collect();
    let trace = model.trace(corpus, &positions, tracked.clone(), Some(seed))?;
    let c_bits = model.size_bits() as f64;
    let bpd = evaluate_bpd_bound(&trace, &SmoothingPlan::global(model.alpha)?, c_bits, delta)?;
    let topk = tracked
        .iter()
        .map(|&k| evaluate_topk_bound(&trace, k, c_bits, delta))
        .collect::<Result<Vec<_>>>()?;
    Ok(MarkovBound {
        order: model.order,
        entries: model.entry_count(),
        size_bits: model.size_bits(),
        bpd,
        topk,
    })
}
