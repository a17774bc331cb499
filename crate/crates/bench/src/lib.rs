//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tokenbound_core::trace::{RiskRecord, RiskTrace, TraceHeader};

/// `n` records with a spread of confident and diffuse predictions.
pub fn random_trace(n: usize, vocab_size: u32, seed: u64) -> RiskTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let p = 10f64.powf(-rng.random_range(0.0..6.0));
            RiskRecord::new(p, Some(rng.random_range(1..=vocab_size)), i == 0)
        })
        .collect();
    let header = TraceHeader {
        vocab_size,
        total_tokens: 100 * n as u64,
        model_id: "bench".into(),
        tracked_k: vec![1, 10, 100],
        subsample_seed: Some(seed),
    };
    RiskTrace::new(header, records).expect("valid trace")
}

/// Skewed symbols over `alphabet` values, each appearing at least once.
pub fn skewed_symbols(n: usize, alphabet: u32, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<u32> = (0..alphabet).collect();
    out.extend((0..n).map(|_| {
        let u: f64 = rng.random();
        ((u * u * u) * alphabet as f64) as u32
    }));
    out
}
