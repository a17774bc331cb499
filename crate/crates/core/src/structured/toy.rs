//! A toy autoregressive model: `logits = W·φ(context) + bias`.
//!
//! `W` is a [`StructuredLinear`] of shape `V × dim(φ)`, optionally trained
//! inside a Kronecker subspace. Training is plain SGD on the softmax
//! cross-entropy with analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gradcheck::softmax;
use super::layer::{LayerKind, Parametrization, StructuredLinear};
use super::subspace::SubspaceExpansion;
use crate::coder::{quantize_uniform, CompressedArtifact, HeaderField, Quantized};
use crate::corpus::TokenStream;
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::trace::{subsample_positions, RiskRecord, RiskTrace, TraceHeader};

/// Context features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Features {
    /// Sum of one-hot vectors of the last `c` same-document tokens.
    Bag,
    /// One-hot per (lag, token) for the last `c` tokens, a one-hot of the
    /// in-document position (capped at `positions − 1`), and a one-hot of a
    /// hash of the ordered context and position into `hash_buckets` slots.
    Lagged { positions: usize, hash_buckets: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub vocab_size: u32,
    pub context: usize,
    pub features: Features,
}

/// Sparse feature vector as `(index, value)` pairs.
pub type SparseFeatures = Vec<(usize, f64)>;

fn fnv1a(words: impl Iterator<Item = u64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        let v = self.vocab_size as usize;
        match self.features {
            Features::Bag => v,
            Features::Lagged {
                positions,
                hash_buckets,
            } => self.context * v + positions + hash_buckets,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::invalid("vocabulary must have at least two tokens"));
        }
        if let Features::Lagged {
            positions,
            hash_buckets,
        } = self.features
        {
            if positions == 0 || hash_buckets == 0 {
                return Err(Error::invalid("lagged features need positions and hash buckets"));
            }
        }
        Ok(())
    }

    /// Features for predicting token `i` whose document starts at `begin`.
    pub fn extract(&self, stream: &TokenStream, i: usize, begin: usize) -> SparseFeatures {
        let v = self.vocab_size as usize;
        let available = (i - begin).min(self.context);
        let ctx = &stream.tokens[i - available..i];
        match self.features {
            Features::Bag => {
                let mut ids: Vec<usize> = ctx.iter().map(|&t| t as usize).collect();
                ids.sort_unstable();
                let mut out: SparseFeatures = Vec::with_capacity(ids.len());
                for id in ids {
                    match out.last_mut() {
                        Some((last, val)) if *last == id => *val += 1.0,
                        _ => out.push((id, 1.0)),
                    }
                }
                out
            }
            Features::Lagged {
                positions,
                hash_buckets,
            } => {
                let mut out: SparseFeatures = ctx
                    .iter()
                    .rev()
                    .enumerate()
                    .map(|(lag, &t)| (lag * v + t as usize, 1.0))
                    .collect();
                let pos = i - begin;
                let base = self.context * v;
                out.push((base + pos.min(positions - 1), 1.0));
                let key = fnv1a(std::iter::once(pos as u64).chain(ctx.iter().map(|&t| t as u64)));
                out.push((base + positions + (key % hash_buckets as u64) as usize, 1.0));
                out
            }
        }
    }

    fn densify(&self, x: &SparseFeatures) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        for &(i, v) in x {
            d[i] += v;
        }
        d
    }
}

/// Prediction summary at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub p_true: f64,
    /// 1-based rank of the target, ties broken by token id.
    pub rank: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub features: FeatureMap,
    pub layer: StructuredLinear,
    pub bias: Vec<f64>,
}

impl ToyModel {
    pub fn new(features: FeatureMap, param: Parametrization, seed: u64) -> Result<Self> {
        features.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = features.vocab_size as usize;
        let layer = StructuredLinear::init(param, v, features.dim(), &mut rng)?;
        Ok(Self {
            features,
            layer,
            bias: vec![0.0; v],
        })
    }

    pub fn param_count(&self) -> usize {
        self.layer.param_count() + self.bias.len()
    }

    /// Layer parameters followed by the bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut p = self.layer.flatten();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn unpack(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let n = self.layer.param_count();
        self.layer.unpack(&params[..n])?;
        self.bias.copy_from_slice(&params[n..]);
        Ok(())
    }

    pub fn logits(&self, x: &SparseFeatures) -> Vec<f64> {
        let mut z = match self.layer.kind() {
            LayerKind::Dense { w } => {
                let mut z = vec![0.0; w.nrows()];
                for &(f, val) in x {
                    for (zi, wi) in z.iter_mut().zip(w.column(f).iter()) {
                        *zi += val * wi;
                    }
                }
                z
            }
            _ => self
                .layer
                .apply(&self.features.densify(x))
                .expect("feature dimension matches the layer"),
        };
        for (zi, b) in z.iter_mut().zip(&self.bias) {
            *zi += b;
        }
        z
    }

    pub fn predict(&self, x: &SparseFeatures, target: u32) -> Prediction {
        let z = self.logits(x);
        let t = target as usize;
        let p = softmax(&z)[t];
        let zt = z[t];
        let better = z
            .iter()
            .enumerate()
            .filter(|&(j, &zj)| zj > zt || (zj == zt && j < t))
            .count();
        Prediction {
            // an underflowed probability is still a (huge) finite loss
            p_true: p.max(f64::MIN_POSITIVE),
            rank: better as u32 + 1,
        }
    }

    /// `∂CE/∂logits = softmax − onehot`.
    fn output_grad(&self, x: &SparseFeatures, target: u32) -> Vec<f64> {
        let mut g = softmax(&self.logits(x));
        g[target as usize] -= 1.0;
        g
    }

    /// One SGD step on a single example.
    pub fn sgd_step(&mut self, x: &SparseFeatures, target: u32, lr: f64) {
        let g = self.output_grad(x, target);
        match self.layer.kind_mut() {
            LayerKind::Dense { w } => {
                for &(f, val) in x {
                    for (wi, gi) in w.column_mut(f).iter_mut().zip(&g) {
                        *wi -= lr * val * gi;
                    }
                }
            }
            _ => {
                let dense = self.features.densify(x);
                let grad = self.layer.grad(&dense, &g).expect("shapes match");
                self.layer.add_scaled(&grad, -lr).expect("shapes match");
            }
        }
        for (b, gi) in self.bias.iter_mut().zip(&g) {
            *b -= lr * gi;
        }
    }

    /// `out += ∂CE/∂params` in flattened order.
    pub fn accumulate_grad(&self, x: &SparseFeatures, target: u32, out: &mut [f64]) {
        let g = self.output_grad(x, target);
        let n = self.layer.param_count();
        let dense = self.features.densify(x);
        self.layer
            .accumulate_grad(&dense, &g, 1.0, &mut out[..n])
            .expect("shapes match");
        for (o, gi) in out[n..].iter_mut().zip(&g) {
            *o += gi;
        }
    }

    /// Cross-entropy of one example in nats.
    pub fn loss(&self, x: &SparseFeatures, target: u32) -> f64 {
        let z = self.logits(x);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        lse - z[target as usize]
    }

    /// Mean NLL in bits over every position of `stream`.
    pub fn nll_bits_per_token(&self, stream: &TokenStream) -> f64 {
        let begins = stream.doc_begins();
        let losses: Vec<f64> = (0..stream.len())
            .map(|i| self.loss(&self.features.extract(stream, i, begins[i]), stream.tokens[i]))
            .collect();
        pairwise_sum(&losses) / std::f64::consts::LN_2 / stream.len().max(1) as f64
    }

    /// Fraction of positions accepted by `select` whose target is ranked first.
    pub fn accuracy(&self, stream: &TokenStream, select: impl Fn(usize, u32) -> bool) -> f64 {
        let begins = stream.doc_begins();
        let (mut hit, mut total) = (0usize, 0usize);
        for (i, (&t, &begin)) in stream.tokens.iter().zip(&begins).enumerate() {
            if !select(i, t) {
                continue;
            }
            total += 1;
            if self.predict(&self.features.extract(stream, i, begin), t).rank == 1 {
                hit += 1;
            }
        }
        hit as f64 / total.max(1) as f64
    }

    /// Trace over the given positions.
    pub fn trace(
        &self,
        stream: &TokenStream,
        positions: &[u64],
        tracked_k: Vec<u32>,
        seed: Option<u64>,
        model_id: String,
    ) -> Result<RiskTrace> {
        let max_k = tracked_k.last().copied().unwrap_or(0);
        let records = positions
            .iter()
            .map(|&pos| {
                let i = pos as usize;
                if i >= stream.len() {
                    return Err(Error::invalid(format!("position {i} outside the stream")));
                }
                let x = self.features.extract(stream, i, stream.doc_begin(i));
                let pred = self.predict(&x, stream.tokens[i]);
                Ok(RiskRecord {
                    p_true: pred.p_true,
                    topk_rank: (pred.rank <= max_k).then_some(pred.rank),
                    doc_start: stream.doc_start[i],
                    alpha: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        RiskTrace::new(
            TraceHeader {
                vocab_size: self.features.vocab_size,
                total_tokens: stream.len() as u64,
                model_id,
                tracked_k,
                subsample_seed: seed,
            },
            records,
        )
    }
}

/// Training and coding configuration for [`train_toy_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub parametrization: Parametrization,
    pub context: usize,
    pub features: Features,
    /// Number of single-example SGD steps (or examples, in subspace mode).
    pub steps: u64,
    pub lr: f64,
    pub seed: u64,
    pub levels: u32,
    pub subspace_dim: Option<usize>,
    /// Minibatch size, used in subspace mode only.
    pub batch_size: usize,
    pub n_subsample: u64,
    pub tracked_k: Vec<u32>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            parametrization: Parametrization::Dense,
            context: 4,
            features: Features::Bag,
            steps: 100_000,
            lr: 0.1,
            seed: 0,
            levels: 16,
            subspace_dim: None,
            batch_size: 32,
            n_subsample: 10_000,
            tracked_k: vec![1, 10, 100],
        }
    }
}

/// A trained toy model with its coded artifact and held-in trace.
#[derive(Debug, Clone)]
pub struct ToyRun {
    pub config: ToyConfig,
    pub full_precision: ToyModel,
    /// The model reconstructed from the artifact; the trace comes from it.
    pub quantized: ToyModel,
    pub artifact: CompressedArtifact,
    pub trace: RiskTrace,
}

impl ToyRun {
    pub fn complexity_bits(&self) -> u64 {
        self.artifact.total_bits()
    }
}

/// The expansion used in subspace mode: origin at the seeded
/// initialization, projector seeded from `seed + 1`.
fn expansion_for(model: &ToyModel, dim: usize, seed: u64) -> Result<SubspaceExpansion> {
    SubspaceExpansion::padded(model.flatten(), dim, seed.wrapping_add(1))
}

fn architecture_header(
    features: &FeatureMap,
    param: Parametrization,
    subspace_dim: Option<usize>,
    seed: u64,
) -> Result<Vec<HeaderField>> {
    let (x, y) = param.shape_args();
    let (kind, positions, buckets) = match features.features {
        Features::Bag => (0, 0, 0),
        Features::Lagged {
            positions,
            hash_buckets,
        } => (1, positions, hash_buckets),
    };
    Ok(vec![
        HeaderField::new("vocab_size", 32, features.vocab_size as u64)?,
        HeaderField::new("parametrization", 2, param.code())?,
        HeaderField::new("shape_x", 32, x as u64)?,
        HeaderField::new("shape_y", 32, y as u64)?,
        HeaderField::new("context", 8, features.context as u64)?,
        HeaderField::new("feature_kind", 1, kind)?,
        HeaderField::new("positions", 32, positions as u64)?,
        HeaderField::new("hash_buckets", 32, buckets as u64)?,
        HeaderField::new("subspace_dim", 32, subspace_dim.unwrap_or(0) as u64)?,
        HeaderField::new("seed", 64, seed)?,
    ])
}

impl ToyModel {
    /// Rebuilds the (quantized) model from a toy-model artifact.
    pub fn from_artifact(art: &CompressedArtifact) -> Result<Self> {
        let field = |name: &str| {
            art.field(name)
                .ok_or_else(|| Error::Decode(format!("missing header field {name}")))
        };
        let features = FeatureMap {
            vocab_size: field("vocab_size")? as u32,
            context: field("context")? as usize,
            features: match field("feature_kind")? {
                0 => Features::Bag,
                _ => Features::Lagged {
                    positions: field("positions")? as usize,
                    hash_buckets: field("hash_buckets")? as usize,
                },
            },
        };
        let param = Parametrization::from_code(
            field("parametrization")?,
            field("shape_x")? as usize,
            field("shape_y")? as usize,
        )?;
        let seed = field("seed")?;
        let mut model = ToyModel::new(features, param, seed)?;
        let values = art.decode_quantized()?.dequantize();
        match field("subspace_dim")? as usize {
            0 => model.unpack(&values)?,
            d => {
                let exp = expansion_for(&model, d, seed)?;
                model.unpack(&exp.expand(&values)?)?;
            }
        }
        Ok(model)
    }

    /// Uniformly quantizes the flat parameters.
    pub fn quantized(&self, levels: u32) -> Result<(ToyModel, Quantized)> {
        let q = quantize_uniform(&self.flatten(), levels)?;
        let mut m = self.clone();
        m.unpack(&q.dequantize())?;
        Ok((m, q))
    }
}

/// Seeded visiting order: reshuffled every pass over the positions.
struct Schedule {
    order: Vec<usize>,
    at: usize,
    rng: ChaCha8Rng,
}

impl Schedule {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            at: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.next();
        s.at = 0;
        s
    }

    fn next(&mut self) -> usize {
        if self.at == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.at = 0;
        }
        self.at += 1;
        self.order[self.at - 1]
    }
}

/// Trains at full precision without quantizing.
pub fn train_full_precision(corpus: &TokenStream, config: &ToyConfig) -> Result<ToyModel> {
    fit(corpus, config).map(|(model, _)| model)
}

/// Returns the model and its trainable vector (`θ`, or `w` in subspace mode).
fn fit(corpus: &TokenStream, config: &ToyConfig) -> Result<(ToyModel, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot train on an empty corpus"));
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let features = FeatureMap {
        vocab_size: corpus.vocab_size,
        context: config.context,
        features: config.features,
    };
    let mut model = ToyModel::new(features, config.parametrization, config.seed)?;
    let begins = corpus.doc_begins();
    let mut schedule = Schedule::new(corpus.len(), config.seed.wrapping_add(2));
    let example = |model: &ToyModel, i: usize| (model.features.extract(corpus, i, begins[i]), corpus.tokens[i]);
    match config.subspace_dim {
        None => {
            for _ in 0..config.steps {
                let (x, t) = example(&model, schedule.next());
                model.sgd_step(&x, t, config.lr);
            }
            let theta = model.flatten();
            Ok((model, theta))
        }
        Some(d) => {
            let exp = expansion_for(&model, d, config.seed)?;
            let mut w = vec![0.0; d];
            let batch = config.batch_size.max(1);
            let mut grad = vec![0.0; model.param_count()];
            let mut done = 0u64;
            while done < config.steps {
                let take = batch.min((config.steps - done) as usize);
                grad.iter_mut().for_each(|g| *g = 0.0);
                for _ in 0..take {
                    let (x, t) = example(&model, schedule.next());
                    model.accumulate_grad(&x, t, &mut grad);
                }
                let gw = exp.pull_back(&grad)?;
                for (wi, gi) in w.iter_mut().zip(&gw) {
                    *wi -= config.lr * gi / take as f64;
                }
                model.unpack(&exp.expand(&w)?)?;
                done += take as u64;
            }
            Ok((model, w))
        }
    }
}

/// Trains, quantizes to `config.levels`, arithmetic-codes the trainable
/// vector (`θ`, or `w` in subspace mode) and traces the decoded model on a
/// seeded held-in subsample.
pub fn train_toy_model(corpus: &TokenStream, config: &ToyConfig) -> Result<ToyRun> {
    let (model, trainable) = fit(corpus, config)?;
    let q = quantize_uniform(&trainable, config.levels)?;
    let header = architecture_header(
        &model.features,
        config.parametrization,
        config.subspace_dim,
        config.seed,
    )?;
    let artifact = CompressedArtifact::arithmetic(&q, header)?;
    let quantized = ToyModel::from_artifact(&artifact)?;
    let m = corpus.len() as u64;
    let positions = subsample_positions(m, config.n_subsample.min(m), config.seed.wrapping_add(3))?;
    let tracked: Vec<u32> = config
        .tracked_k
        .iter()
        .copied()
        .filter(|&k| k < corpus.vocab_size)
        .collect();
    let model_id = format!("toy-{}-c{}", config.parametrization.name(), config.context);
    let trace = quantized.trace(corpus, &positions, tracked, Some(config.seed.wrapping_add(3)), model_id)?;
    Ok(ToyRun {
        config: config.clone(),
        full_precision: model,
        quantized,
        artifact,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::SparseMarkov;
    use crate::structured::gradcheck::fd_check;

    fn small_corpus() -> TokenStream {
        TokenStream::from_documents(4, &[vec![0, 1, 2, 3, 0, 1, 2, 3, 0, 1], vec![3, 3, 2, 1, 0, 0, 1]]).unwrap()
    }

    #[test]
    fn bag_and_lagged_features() {
        let s = small_corpus();
        let bag = FeatureMap {
            vocab_size: 4,
            context: 3,
            features: Features::Bag,
        };
        assert_eq!(bag.extract(&s, 5, 0), vec![(0, 1.0), (2, 1.0), (3, 1.0)]);
        assert_eq!(bag.extract(&s, 13, 10), vec![(2, 1.0), (3, 2.0)]);
        assert!(bag.extract(&s, 10, 10).is_empty());
        let lagged = FeatureMap {
            vocab_size: 4,
            context: 2,
            features: Features::Lagged {
                positions: 4,
                hash_buckets: 8,
            },
        };
        let f = lagged.extract(&s, 12, 10);
        assert_eq!(&f[..3], &[(3, 1.0), (4 + 3, 1.0), (8 + 2, 1.0)]);
        assert!(f[3].0 >= 12 && f[3].0 < 20);
        assert_eq!(lagged.dim(), 20);
    }

    #[test]
    fn model_gradient_matches_finite_differences() {
        let s = small_corpus();
        for param in [
            Parametrization::Dense,
            Parametrization::Lora { rank: 2 },
            Parametrization::Kronecker { a1: 2, b1: 2 },
            Parametrization::Monarch {
                in_blocks: 2,
                out_blocks: 2,
            },
        ] {
            let features = FeatureMap {
                vocab_size: 4,
                context: 3,
                features: Features::Bag,
            };
            let mut model = ToyModel::new(features, param, 1).unwrap();
            let p: Vec<f64> = (0..model.param_count())
                .map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5)
                .collect();
            model.unpack(&p).unwrap();
            let x = features.extract(&s, 6, 0);
            let mut g = vec![0.0; model.param_count()];
            model.accumulate_grad(&x, 3, &mut g);
            let mut probe = model.clone();
            let err = fd_check(&p, &g, 1e-5, |q| {
                probe.unpack(q).unwrap();
                probe.loss(&x, 3)
            })
            .unwrap();
            assert!(err < 1e-4, "{param:?}: {err}");
        }
    }

    #[test]
    fn sparse_dense_step_matches_general_path() {
        let s = small_corpus();
        let features = FeatureMap {
            vocab_size: 4,
            context: 2,
            features: Features::Bag,
        };
        let mut a = ToyModel::new(features, Parametrization::Dense, 5).unwrap();
        let b = a.clone();
        let x = features.extract(&s, 3, 0);
        a.sgd_step(&x, 2, 0.5);
        let mut g = vec![0.0; b.param_count()];
        b.accumulate_grad(&x, 2, &mut g);
        let expected: Vec<f64> = b.flatten().iter().zip(&g).map(|(p, gi)| p - 0.5 * gi).collect();
        for (u, v) in a.flatten().iter().zip(&expected) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn unigram_model_approaches_empirical_entropy() {
        let lang = crate::corpus::SyntheticLanguage {
            vocab_size: 16,
            doc_len: (20, 40),
            seed: 4,
            ..Default::default()
        };
        let corpus = lang.generate(5_000).unwrap();
        let config = ToyConfig {
            context: 0,
            steps: 60_000,
            lr: 0.05,
            ..Default::default()
        };
        let model = train_full_precision(&corpus, &config).unwrap();
        let unigram = SparseMarkov::train_with(&corpus, 0, 1e-9, 32).unwrap();
        let empirical = unigram.nll_bits(&corpus) / corpus.len() as f64;
        let toy = model.nll_bits_per_token(&corpus);
        assert!(toy >= empirical - 1e-6);
        assert!(toy - empirical < 0.02, "toy {toy} vs empirical {empirical}");
    }

    #[test]
    fn artifact_reconstructs_quantized_model() {
        let corpus = small_corpus();
        for (param, sub) in [
            (Parametrization::Lora { rank: 1 }, None),
            (
                Parametrization::Monarch {
                    in_blocks: 2,
                    out_blocks: 2,
                },
                Some(4),
            ),
        ] {
            let config = ToyConfig {
                parametrization: param,
                context: 2,
                steps: 200,
                subspace_dim: sub,
                batch_size: 4,
                levels: 8,
                n_subsample: 5,
                ..Default::default()
            };
            let run = train_toy_model(&corpus, &config).unwrap();
            let bytes = run.artifact.to_bytes();
            let back = ToyModel::from_artifact(&CompressedArtifact::from_bytes(&bytes).unwrap()).unwrap();
            assert_eq!(back, run.quantized);
            assert_eq!(run.trace.len(), 5);
            // determinism
            let again = train_toy_model(&corpus, &config).unwrap();
            assert_eq!(again.artifact.to_bytes(), bytes);
        }
    }
}
