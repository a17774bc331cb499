//! Integer-sequence datasets from short expression-tree recurrences, the
//! IID random baseline, and the quantization-sweep memorization experiment.
//!
//! A structured sequence is `a_0, a_1, …` with `a_0` a seeded digit and
//! `a_i = f(a_{i−1}, i) mod 10` for a random expression tree `f`. Each
//! sequence becomes one document `BOS a_0 … a_{L−1} DELIM` over a
//! 12-token vocabulary.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenStream;
use crate::error::{Error, Result};
use crate::structured::{train_full_precision, Features, Parametrization, ToyConfig};

pub const MODULUS: u32 = 10;
pub const BOS: u32 = 10;
pub const DELIM: u32 = 11;
pub const VOCAB_SIZE: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExprTree {
    Prev,
    Index,
    Const(u32),
    Node(Op, Box<ExprTree>, Box<ExprTree>),
}

impl ExprTree {
    pub fn node(op: Op, l: ExprTree, r: ExprTree) -> Self {
        ExprTree::Node(op, Box::new(l), Box::new(r))
    }

    /// Value mod 10; total because there is no division.
    pub fn eval(&self, prev: u32, index: u32) -> u32 {
        self.eval_raw(prev as i64, index as i64).rem_euclid(MODULUS as i64) as u32
    }

    fn eval_raw(&self, prev: i64, index: i64) -> i64 {
        let m = MODULUS as i64;
        match self {
            ExprTree::Prev => prev,
            ExprTree::Index => index,
            ExprTree::Const(c) => *c as i64,
            ExprTree::Node(op, l, r) => {
                let (a, b) = (l.eval_raw(prev, index) % m, r.eval_raw(prev, index) % m);
                match op {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                }
            }
        }
    }

    pub fn operator_count(&self) -> usize {
        match self {
            ExprTree::Node(_, l, r) => 1 + l.operator_count() + r.operator_count(),
            _ => 0,
        }
    }

    /// A random tree with exactly `operators` internal nodes; leaves are
    /// the previous term, the index, or a constant in 1..=3.
    pub fn random(operators: usize, rng: &mut impl Rng) -> Self {
        if operators == 0 {
            return match rng.random_range(0..3) {
                0 => ExprTree::Prev,
                1 => ExprTree::Index,
                _ => ExprTree::Const(rng.random_range(1..=3)),
            };
        }
        let op = [Op::Add, Op::Sub, Op::Mul][rng.random_range(0..3)];
        let left = rng.random_range(0..operators);
        let l = Self::random(left, rng);
        let r = Self::random(operators - 1 - left, rng);
        Self::node(op, l, r)
    }

    /// `a_0 = start`, `a_i = f(a_{i−1}, i)`.
    pub fn trajectory(&self, start: u32, length: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(length);
        let mut a = start % MODULUS;
        for i in 0..length {
            if i > 0 {
                a = self.eval(a, i as u32);
            }
            out.push(a);
        }
        out
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprTree::Prev => write!(f, "prev"),
            ExprTree::Index => write!(f, "i"),
            ExprTree::Const(c) => write!(f, "{c}"),
            ExprTree::Node(op, l, r) => {
                let s = match op {
                    Op::Add => "+",
                    Op::Sub => "-",
                    Op::Mul => "*",
                };
                write!(f, "({l} {s} {r})")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Structured,
    Random,
}

impl fmt::Display for SequenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SequenceKind::Structured => "structured",
            SequenceKind::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceDataset {
    pub kind: SequenceKind,
    pub sequences: Vec<Vec<u32>>,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sorted distinct integers appearing in the dataset.
    pub fn unique_integers(&self) -> Vec<u32> {
        let mut seen = [false; MODULUS as usize];
        for &x in self.sequences.iter().flatten() {
            seen[x as usize] = true;
        }
        (0..MODULUS).filter(|&x| seen[x as usize]).collect()
    }

    /// One document per sequence: `BOS a_0 … a_{L−1} DELIM`.
    pub fn to_stream(&self) -> TokenStream {
        let docs: Vec<Vec<u32>> = self
            .sequences
            .iter()
            .map(|s| {
                let mut d = Vec::with_capacity(s.len() + 2);
                d.push(BOS);
                d.extend_from_slice(s);
                d.push(DELIM);
                d
            })
            .collect();
        TokenStream::from_documents(VOCAB_SIZE, &docs).expect("all tokens lie in the vocabulary")
    }
}

pub const DEFAULT_COMPLEXITY: usize = 4;
pub const DEFAULT_LENGTH: usize = 30;
pub const DEFAULT_COUNT: usize = 984;

/// `count` trajectories of length `length`, each from its own random tree
/// with 1..=`complexity` operators and a random start digit.
pub fn gen_structured(complexity: usize, length: usize, count: usize, seed: u64) -> Result<SequenceDataset> {
    if complexity == 0 || length == 0 || count == 0 {
        return Err(Error::invalid("complexity, length and count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = (0..count)
        .map(|_| {
            let ops = rng.random_range(1..=complexity);
            let tree = ExprTree::random(ops, &mut rng);
            let start = rng.random_range(0..MODULUS);
            tree.trajectory(start, length)
        })
        .collect();
    Ok(SequenceDataset {
        kind: SequenceKind::Structured,
        sequences,
    })
}

/// Same shape as `structured`, entries IID uniform over its unique integers.
pub fn gen_random_baseline(structured: &SequenceDataset, seed: u64) -> Result<SequenceDataset> {
    if structured.is_empty() {
        return Err(Error::invalid("structured dataset is empty"));
    }
    let support = structured.unique_integers();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = structured
        .sequences
        .iter()
        .map(|s| s.iter().map(|_| support[rng.random_range(0..support.len())]).collect())
        .collect();
    Ok(SequenceDataset {
        kind: SequenceKind::Random,
        sequences,
    })
}

/// One row of the memorization table; `levels = None` is full precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemorizationRow {
    pub kind: SequenceKind,
    pub levels: Option<u32>,
    pub accuracy: f64,
}

/// The trainer used for memorization: a dense model over lagged,
/// positional and hashed-context features, so that random sequences are
/// memorizable at full precision.
pub fn memorization_config(tokens: usize) -> ToyConfig {
    ToyConfig {
        parametrization: Parametrization::Dense,
        context: 6,
        features: Features::Lagged {
            positions: 32,
            hash_buckets: 1 << 20,
        },
        steps: 40 * tokens as u64,
        lr: 1.0,
        seed: 0,
        ..Default::default()
    }
}

/// Trains one model per dataset at full precision, then quantizes all of
/// its parameters to each level count and measures next-token training
/// accuracy on the integer tokens.
pub fn memorization_experiment(
    datasets: &[&SequenceDataset],
    config: &ToyConfig,
    levels: &[u32],
) -> Result<Vec<MemorizationRow>> {
    let mut rows = Vec::new();
    for ds in datasets {
        let stream = ds.to_stream();
        let model = train_full_precision(&stream, config)?;
        let digits = |_: usize, t: u32| t < MODULUS;
        rows.push(MemorizationRow {
            kind: ds.kind,
            levels: None,
            accuracy: model.accuracy(&stream, digits),
        });
        for &l in levels {
            let (q, _) = model.quantized(l)?;
            rows.push(MemorizationRow {
                kind: ds.kind,
                levels: Some(l),
                accuracy: q.accuracy(&stream, digits),
            });
        }
    }
    Ok(rows)
}
