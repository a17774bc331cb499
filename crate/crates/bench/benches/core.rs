use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tokenbound_bench::{random_trace, skewed_symbols};
use tokenbound_core::bound::{evaluate_bpd_bound, evaluate_topk_bound};
use tokenbound_core::coder::{arith_decode, arith_encode, FrequencyModel};
use tokenbound_core::corpus::SyntheticLanguage;
use tokenbound_core::markov::SparseMarkov;
use tokenbound_core::smoothing::{grid_search_global_alpha, optimize_per_token_alpha, SmoothingPlan};
use tokenbound_core::structured::{Parametrization, StructuredLinear};

fn bound(c: &mut Criterion) {
    let trace = random_trace(100_000, 50_257, 1);
    let plan = SmoothingPlan::global(0.01).unwrap();
    c.bench_function("bpd bound, 100k records", |b| {
        b.iter(|| evaluate_bpd_bound(black_box(&trace), &plan, 1e6, 0.05).unwrap())
    });
    c.bench_function("top-10 bound, 100k records", |b| {
        b.iter(|| evaluate_topk_bound(black_box(&trace), 10, 1e6, 0.05).unwrap())
    });
    let small = random_trace(10_000, 50_257, 2);
    c.bench_function("alpha grid search, 10k records", |b| {
        b.iter(|| grid_search_global_alpha(black_box(&small), 1e6, 0.05).unwrap())
    });
    c.bench_function("per-token alpha, 10k records", |b| {
        b.iter(|| optimize_per_token_alpha(black_box(&small), 1e6, 0.05, 8).unwrap())
    });
}

fn coder(c: &mut Criterion) {
    let symbols = skewed_symbols(1_000_000, 16, 3);
    let model = FrequencyModel::from_symbols(&symbols, 16).unwrap();
    let bytes = arith_encode(&symbols, &model).unwrap();
    c.bench_function("arith encode, 1M symbols", |b| {
        b.iter(|| arith_encode(black_box(&symbols), &model).unwrap())
    });
    c.bench_function("arith decode, 1M symbols", |b| {
        b.iter(|| arith_decode(black_box(&bytes), &model, symbols.len()).unwrap())
    });
}

fn structured(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..1024).map(|i| (i as f64 * 0.1).sin()).collect();
    for (name, p) in [
        ("dense", Parametrization::Dense),
        (
            "monarch 32x32",
            Parametrization::Monarch {
                in_blocks: 32,
                out_blocks: 32,
            },
        ),
        ("kronecker 32x32", Parametrization::Kronecker { a1: 32, b1: 32 }),
        ("lora r=8", Parametrization::Lora { rank: 8 }),
    ] {
        let layer = StructuredLinear::init(p, 1024, 1024, &mut rng).unwrap();
        c.bench_function(&format!("apply 1024x1024 {name}"), |b| {
            b.iter(|| layer.apply(black_box(&x)).unwrap())
        });
    }
}

fn markov(c: &mut Criterion) {
    let corpus = SyntheticLanguage {
        seed: 5,
        ..Default::default()
    }
    .generate(200_000)
    .unwrap();
    let mut g = c.benchmark_group("markov");
    g.sample_size(10);
    for k in [1, 2, 4] {
        g.bench_function(format!("train order {k}, 200k tokens"), |b| {
            b.iter(|| SparseMarkov::train(black_box(&corpus), k).unwrap())
        });
    }
    let model = SparseMarkov::train(&corpus, 2).unwrap();
    g.bench_function("nll order 2, 200k tokens", |b| {
        b.iter(|| model.nll_bits(black_box(&corpus)))
    });
    g.finish();
}

criterion_group!(benches, bound, coder, structured, markov);
criterion_main!(benches);
