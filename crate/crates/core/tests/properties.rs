use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tokenbound_core::bound::{evaluate_bpd_bound, evaluate_topk_bound, split_failure_probability};
use tokenbound_core::coder::arith::{arith_decode, arith_encode, FrequencyModel};
use tokenbound_core::coder::bits::{BitReader, BitWriter};
use tokenbound_core::coder::quantize::quantize_uniform;
use tokenbound_core::corpus::TokenStream;
use tokenbound_core::format::{read_trace, write_trace, TraceFormat};
use tokenbound_core::markov::SparseMarkov;
use tokenbound_core::smoothing::{interval_width, smooth_prob, SmoothingPlan};
use tokenbound_core::structured::{Parametrization, StructuredLinear, SubspaceExpansion};
use tokenbound_core::trace::{subsample_positions, RiskRecord, RiskTrace, TraceHeader};

fn record() -> impl Strategy<Value = RiskRecord> {
    (
        prop_oneof![Just(1.0), 1e-300f64..1.0],
        proptest::option::of(1u32..200),
        any::<bool>(),
        proptest::option::of(1e-6f64..=1.0),
    )
        .prop_map(|(p, rank, doc_start, alpha)| RiskRecord {
            p_true: p,
            topk_rank: rank,
            doc_start,
            alpha,
        })
}

fn trace() -> impl Strategy<Value = RiskTrace> {
    (
        2u32..100_000,
        proptest::collection::vec(record(), 1..60),
        proptest::option::of(any::<u64>()),
        "[a-z0-9/._-]{0,12}",
        proptest::collection::btree_set(1u32..500, 0..4),
    )
        .prop_map(|(v, mut records, seed, model_id, ks)| {
            if seed.is_none() {
                records[0].doc_start = true;
            }
            let header = TraceHeader {
                vocab_size: v,
                total_tokens: records.len() as u64 * 3,
                model_id,
                tracked_k: ks.into_iter().collect(),
                subsample_seed: seed,
            };
            RiskTrace::new(header, records).unwrap()
        })
}

fn parametrized_layer() -> impl Strategy<Value = (Parametrization, usize, usize, u64)> {
    prop_oneof![
        (1usize..12, 1usize..12).prop_map(|(r, c)| (Parametrization::Dense, r, c)),
        (1usize..12, 1usize..12, 1usize..4).prop_map(|(r, c, k)| (Parametrization::Lora { rank: k }, r, c)),
        (1usize..5, 1usize..5, 1usize..5, 1usize..5).prop_map(|(a1, b1, a2, b2)| (
            Parametrization::Kronecker { a1, b1 },
            a1 * a2,
            b1 * b2
        )),
        (1usize..5, 1usize..5, 1usize..5, 1usize..5).prop_map(|(nb, q, cb, ra)| (
            Parametrization::Monarch {
                in_blocks: nb,
                out_blocks: q
            },
            q * ra,
            nb * cb
        )),
    ]
    .prop_flat_map(|(p, r, c)| (Just(p), Just(r), Just(c), any::<u64>()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn trace_formats_round_trip(t in trace()) {
        for format in [TraceFormat::Text, TraceFormat::Binary] {
            let mut buf = Vec::new();
            write_trace(&t, format, &mut buf).unwrap();
            let (back, detected) = read_trace(buf.as_slice()).unwrap();
            prop_assert_eq!(detected, format);
            prop_assert_eq!(&back, &t);
        }
    }

    #[test]
    fn text_and_binary_certify_identically(t in trace(), c in 1.0f64..1e6) {
        let mut text = Vec::new();
        let mut bin = Vec::new();
        write_trace(&t, TraceFormat::Text, &mut text).unwrap();
        write_trace(&t, TraceFormat::Binary, &mut bin).unwrap();
        let (a, _) = read_trace(text.as_slice()).unwrap();
        let (b, _) = read_trace(bin.as_slice()).unwrap();
        let plan = SmoothingPlan::global(0.01).unwrap();
        prop_assert_eq!(
            evaluate_bpd_bound(&a, &plan, c, 0.05).unwrap(),
            evaluate_bpd_bound(&b, &plan, c, 0.05).unwrap()
        );
    }

    #[test]
    fn smoothed_loss_lies_in_interval(p in 0.0f64..=1.0, alpha in 1e-6f64..=1.0, v in 2u32..1_000_000) {
        let lo = -smooth_prob(1.0, alpha, v).log2();
        let hi = -smooth_prob(0.0, alpha, v).log2();
        let l = -smooth_prob(p, alpha, v).log2();
        prop_assert!(lo - 1e-12 <= l && l <= hi + 1e-12);
        let w = interval_width(alpha, v).unwrap();
        prop_assert!((w - (hi - lo)).abs() <= 1e-9 * w.max(1.0));
    }

    #[test]
    fn width_shrinks_as_alpha_grows(a in 1e-6f64..0.5, b in 0.5f64..=1.0, v in 2u32..100_000) {
        prop_assert!(interval_width(b, v).unwrap() <= interval_width(a, v).unwrap());
    }

    #[test]
    fn bound_monotone_in_complexity_and_delta(
        t in trace(),
        c in 1.0f64..1e5,
        extra in 0.0f64..1e5,
        delta in 0.001f64..0.5,
    ) {
        let plan = SmoothingPlan::global(0.05).unwrap();
        let small = evaluate_bpd_bound(&t, &plan, c, delta).unwrap();
        let large = evaluate_bpd_bound(&t, &plan, c + extra, delta).unwrap();
        prop_assert!(small.bound <= large.bound + 1e-12);
        let looser = evaluate_bpd_bound(&t, &plan, c, (delta * 1.5).min(1.0)).unwrap();
        prop_assert!(looser.bound <= small.bound + 1e-12);
        prop_assert!(small.bound >= small.empirical_term);
    }

    #[test]
    fn topk_bound_dominates_error_rate(t in trace(), c in 1.0f64..1e4) {
        for &k in &t.header.tracked_k {
            let r = evaluate_topk_bound(&t, k, c, 0.05).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.empirical_term));
            prop_assert!(r.bound >= r.empirical_term);
        }
    }

    #[test]
    fn failure_split_sums_to_delta(delta in 1e-6f64..1.0, m in 1u64..1_000_000_000, n in 1u64..100_000) {
        let (d1, d2) = split_failure_probability(delta, m, n).unwrap();
        prop_assert!((d1 + d2 - delta).abs() <= 1e-12 * delta);
        prop_assert!(d1 > 0.0 && d2 > 0.0);
    }

    #[test]
    fn subsample_positions_distinct_sorted(m in 1u64..5_000, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let n = (m as f64 * frac) as u64;
        let pos = subsample_positions(m, n, seed).unwrap();
        prop_assert_eq!(pos.len() as u64, n);
        prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(pos.iter().all(|&p| p < m));
        prop_assert_eq!(pos, subsample_positions(m, n, seed).unwrap());
    }

    #[test]
    fn arithmetic_coder_round_trips(
        freqs in proptest::collection::vec(1u32..1000, 1..40),
        raw in proptest::collection::vec(any::<u32>(), 0..500),
    ) {
        let a = freqs.len() as u32;
        let symbols: Vec<u32> = raw.into_iter().map(|s| s % a).collect();
        let model = FrequencyModel::new(freqs).unwrap();
        let bytes = arith_encode(&symbols, &model).unwrap();
        prop_assert_eq!(arith_decode(&bytes, &model, symbols.len()).unwrap(), symbols.clone());
        let cost = model.cost_bits(&symbols).unwrap();
        prop_assert!(bytes.len() as f64 * 8.0 <= cost + 64.0);
    }

    #[test]
    fn bit_stream_round_trips(items in proptest::collection::vec((any::<u64>(), 1u8..=64), 0..50)) {
        let mut w = BitWriter::new();
        for &(v, width) in &items {
            let masked = if width == 64 { v } else { v & ((1u64 << width) - 1) };
            w.write(masked, width);
            w.write_varint(v);
        }
        let (bytes, len) = w.into_bytes();
        let mut r = BitReader::new(&bytes, len);
        for &(v, width) in &items {
            let masked = if width == 64 { v } else { v & ((1u64 << width) - 1) };
            prop_assert_eq!(r.read(width).unwrap(), masked);
            prop_assert_eq!(r.read_varint().unwrap(), v);
        }
        prop_assert_eq!(r.remaining(), 0);
    }

    #[test]
    fn quantization_error_at_most_half_step(
        w in proptest::collection::vec(-100.0f64..100.0, 1..200),
        levels in 2u32..300,
    ) {
        let q = quantize_uniform(&w, levels).unwrap();
        let back = q.dequantize();
        for (a, b) in w.iter().zip(&back) {
            prop_assert!((a - b).abs() <= q.step() / 2.0 + 1e-9);
        }
    }

    #[test]
    fn apply_matches_materialize((param, rows, cols, seed) in parametrized_layer()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = StructuredLinear::init(param, rows, cols, &mut rng).unwrap();
        let x: Vec<f64> = (0..cols).map(|i| ((seed >> (i % 32)) % 7) as f64 - 3.0).collect();
        let dense = layer.materialize() * DVector::from_column_slice(&x);
        let fast = layer.apply(&x).unwrap();
        for (a, b) in fast.iter().zip(dense.iter()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
        let mut other = layer.clone();
        other.unpack(&layer.flatten()).unwrap();
        prop_assert_eq!(other.materialize(), layer.materialize());
    }

    #[test]
    fn subspace_projection_is_isometric(side in 1usize..12, sub in 1usize..6, seed in any::<u64>()) {
        let sub = sub.min(side);
        let s = SubspaceExpansion::new(side * side, sub * sub, seed).unwrap();
        let w: Vec<f64> = (0..sub * sub).map(|i| (i as f64 * 0.37).sin()).collect();
        let pw = s.project(&w).unwrap();
        let a: f64 = pw.iter().map(|v| v * v).sum();
        let b: f64 = w.iter().map(|v| v * v).sum();
        prop_assert!((a - b).abs() <= 1e-9 * b.max(1e-12));
        prop_assert_eq!(s.pull_back(&pw).unwrap().len(), w.len());
    }

    #[test]
    fn markov_probabilities_normalize(
        docs in proptest::collection::vec(proptest::collection::vec(0u32..6, 1..30), 1..6),
        order in 0usize..3,
        prefix in proptest::collection::vec(0u32..7, 0..3),
    ) {
        let stream = TokenStream::from_documents(6, &docs).unwrap();
        let model = SparseMarkov::train(&stream, order).unwrap();
        let prefix: Vec<u32> = prefix.into_iter().chain(std::iter::repeat(6)).take(order).collect();
        let total: f64 = (0..6).map(|t| model.token_prob(&prefix, t)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let back = SparseMarkov::from_artifact(&model.to_artifact()).unwrap();
        prop_assert_eq!(back.nll_bits(&stream), model.nll_bits(&stream));
    }
}
