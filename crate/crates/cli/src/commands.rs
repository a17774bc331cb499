//! Subcommand arguments, resolved configurations and bodies.
//!
//! Each command has a flag struct whose fields are all optional and a
//! configuration struct carrying the defaults; see [`crate::config`].

use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use tokenbound_core::coder::{deflate_size, quantize_uniform, CompressedArtifact, Scheme};
use tokenbound_core::corpus::{SyntheticLanguage, TokenStream};
use tokenbound_core::format::{read_trace, write_trace, TraceFormat};
use tokenbound_core::markov::{SparseMarkov, MARKOV_TRACKED_K};
use tokenbound_core::sequences::{self, gen_random_baseline, gen_structured, memorization_experiment};
use tokenbound_core::smoothing::optimize_per_token_alpha;
use tokenbound_core::structured::{train_toy_model, Features, Parametrization, ToyConfig};
use tokenbound_core::trace::{subsample_positions, RiskTrace};

use crate::certify::{certify, plan_bits, render, AlphaMode, AssemblyMode, Certificate, CertifyOptions};
use crate::config::{bad_input, read_input, resolve, run_dir, write, write_resolved, REPORT_FORMAT_VERSION};

/// What a command hands back to `main`.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Whether some reported bound is vacuous; `None` when nothing was certified.
    pub vacuous: Option<bool>,
}

/// Flags shared by every run-producing command.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML configuration file (flat, or with a table named after the command).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to a digest-named directory under $TOKENBOUND_OUT.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunReport<'a, C, E> {
    format_version: u32,
    command: &'a str,
    config: &'a C,
    certificate: Option<&'a Certificate>,
    #[serde(flatten)]
    extra: E,
}

fn finish<C: Serialize, E: Serialize>(
    dir: &Path,
    command: &str,
    config: &C,
    certificate: Option<&Certificate>,
    extra: E,
    text: &str,
) -> Result<()> {
    let report = RunReport {
        format_version: REPORT_FORMAT_VERSION,
        command,
        config,
        certificate,
        extra,
    };
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write(dir, "report.json", &json)?;
    write(dir, "report.txt", text.as_bytes())?;
    print!("{text}");
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn outcome(cert: &Certificate) -> Outcome {
    Outcome {
        vacuous: Some(cert.vacuous()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// One document per line of whitespace-separated token ids.
    #[default]
    Tokens,
    /// Plain text, byte tokens (V = 256), blank lines between documents.
    Bytes,
}

fn load_corpus(path: Option<&Path>, format: CorpusFormat, vocab_size: Option<u32>) -> Result<TokenStream> {
    let path = path.ok_or_else(|| bad_input!("a corpus path is required"))?;
    let bytes = read_input(path)?;
    match format {
        CorpusFormat::Tokens => {
            let v = vocab_size.ok_or_else(|| bad_input!("vocab_size is required for token-id corpora"))?;
            TokenStream::read_text(v, bytes.as_slice()).with_context(|| format!("reading {}", path.display()))
        }
        CorpusFormat::Bytes => {
            let text = String::from_utf8_lossy(&bytes);
            let stream = TokenStream::from_plain_text(&text);
            if vocab_size.is_some_and(|v| v != 256) {
                return Err(bad_input!("byte corpora have vocab_size 256"));
            }
            Ok(stream)
        }
    }
}

fn load_trace(path: Option<&Path>) -> Result<RiskTrace> {
    let path = path.ok_or_else(|| bad_input!("a trace path is required"))?;
    let file = std::fs::File::open(path).map_err(|e| bad_input!("cannot open {}: {e}", path.display()))?;
    let (trace, _) = read_trace(BufReader::new(file)).with_context(|| format!("reading trace {}", path.display()))?;
    Ok(trace)
}

fn load_artifact(path: &Path) -> Result<CompressedArtifact> {
    CompressedArtifact::from_bytes(&read_input(path)?).with_context(|| format!("reading artifact {}", path.display()))
}

fn complexity(c_bits: Option<f64>, artifact: Option<&Path>) -> Result<f64> {
    match (c_bits, artifact) {
        (Some(c), None) => Ok(c),
        (None, Some(path)) => Ok(load_artifact(path)?.total_bits() as f64),
        (Some(_), Some(_)) => Err(bad_input!("give either c_bits or artifact, not both")),
        (None, None) => Err(bad_input!("the complexity needs c_bits or an artifact")),
    }
}

fn write_trace_file(dir: &Path, trace: &RiskTrace) -> Result<()> {
    let mut buf = Vec::new();
    write_trace(trace, TraceFormat::Binary, &mut buf)?;
    write(dir, "trace.rtrc", &buf)
}

// ---------------------------------------------------------------- eval-bound

#[derive(Debug, Args, Serialize)]
pub struct EvalBoundArgs {
    /// Risk trace, text or binary.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Compressed model size in bits.
    #[arg(long)]
    pub c_bits: Option<f64>,
    /// Compressed artifact whose total size is the complexity.
    #[arg(long)]
    pub artifact: Option<PathBuf>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_enum)]
    pub alpha_mode: Option<AlphaMode>,
    /// Smoothing rate for --alpha-mode fixed.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bucket count for --alpha-mode per-token.
    #[arg(long)]
    pub buckets: Option<usize>,
    /// Top-k values to certify (default: every tracked k).
    #[arg(long, value_delimiter = ',')]
    pub topk: Option<Vec<u32>>,
    #[arg(long, value_enum)]
    pub assembly: Option<AssemblyMode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBoundConfig {
    pub trace: Option<PathBuf>,
    pub c_bits: Option<f64>,
    pub artifact: Option<PathBuf>,
    pub delta: f64,
    pub alpha_mode: AlphaMode,
    pub alpha: Option<f64>,
    pub buckets: usize,
    pub topk: Option<Vec<u32>>,
    pub assembly: AssemblyMode,
}

impl Default for EvalBoundConfig {
    fn default() -> Self {
        Self {
            trace: None,
            c_bits: None,
            artifact: None,
            delta: 0.05,
            alpha_mode: AlphaMode::Grid,
            alpha: None,
            buckets: 8,
            topk: None,
            assembly: AssemblyMode::Auto,
        }
    }
}

impl EvalBoundConfig {
    fn options(&self) -> CertifyOptions {
        CertifyOptions {
            delta: self.delta,
            alpha_mode: self.alpha_mode,
            alpha: self.alpha,
            buckets: self.buckets,
            topk: self.topk.clone(),
            assembly: self.assembly,
        }
    }
}

pub fn eval_bound(args: &EvalBoundArgs, run: &RunArgs) -> Result<Outcome> {
    let cfg: EvalBoundConfig = resolve("eval-bound", run.config.as_deref(), args)?;
    let trace = load_trace(cfg.trace.as_deref())?;
    let c = complexity(cfg.c_bits, cfg.artifact.as_deref())?;
    let cert = certify(&trace, c, &cfg.options())?;
    let dir = run_dir("eval-bound", &cfg, run.out.as_deref())?;
    write_resolved(&dir, &cfg)?;
    finish(&dir, "eval-bound", &cfg, Some(&cert), (), &render(&cert))?;
    Ok(outcome(&cert))
}

// ------------------------------------------------------------ optimize-alpha

#[derive(Debug, Args, Serialize)]
pub struct OptimizeAlphaArgs {
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub c_bits: Option<f64>,
    #[arg(long)]
    pub artifact: Option<PathBuf>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub buckets: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeAlphaConfig {
    pub trace: Option<PathBuf>,
    pub c_bits: Option<f64>,
    pub artifact: Option<PathBuf>,
    pub delta: f64,
    pub buckets: usize,
}

impl Default for OptimizeAlphaConfig {
    fn default() -> Self {
        Self {
            trace: None,
            c_bits: None,
            artifact: None,
            delta: 0.05,
            buckets: 8,
        }
    }
}

/// Fits a per-token plan, writes it as `plan.json`, and certifies both the
/// plan and the best global rate for comparison.
pub fn optimize_alpha(args: &OptimizeAlphaArgs, run: &RunArgs) -> Result<Outcome> {
    let cfg: OptimizeAlphaConfig = resolve("optimize-alpha", run.config.as_deref(), args)?;
    let trace = load_trace(cfg.trace.as_deref())?;
    let c = complexity(cfg.c_bits, cfg.artifact.as_deref())?;
    let fit = optimize_per_token_alpha(&trace, c, cfg.delta, cfg.buckets)?;
    let opts = |mode| CertifyOptions {
        delta: cfg.delta,
        alpha_mode: mode,
        alpha: None,
        buckets: cfg.buckets,
        topk: Some(Vec::new()),
        assembly: AssemblyMode::Auto,
    };
    let grid = certify(&trace, c, &opts(AlphaMode::Grid))?;
    let per_token = certify(&trace, c, &opts(AlphaMode::PerToken))?;
    let dir = run_dir("optimize-alpha", &cfg, run.out.as_deref())?;
    write_resolved(&dir, &cfg)?;
    let mut plan = serde_json::to_vec_pretty(&fit.plan)?;
    plan.push(b'\n');
    write(&dir, "plan.json", &plan)?;
    let text = format!(
        "global grid:  bound {:.4} (α = {:.6}, +{} bits)\nper-token:    bound {:.4} (+{} bits for the plan)\nobjective:    {}\n",
        grid.bpd.bound,
        fit.initial_alpha,
        grid.plan_bits,
        per_token.bpd.bound,
        plan_bits(&fit.plan),
        fit.objective_history
            .iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join(" → ")
    );
    #[derive(Serialize)]
    struct Extra<'a> {
        global_grid: &'a Certificate,
        objective_history: &'a [f64],
    }
    finish(
        &dir,
        "optimize-alpha",
        &cfg,
        Some(&per_token),
        Extra {
            global_grid: &grid,
            objective_history: &fit.objective_history,
        },
        &text,
    )?;
    Ok(outcome(&per_token))
}

// -------------------------------------------------------------- train-markov

#[derive(Debug, Args, Serialize)]
pub struct TrainMarkovArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub corpus_format: Option<CorpusFormat>,
    #[arg(long)]
    pub vocab_size: Option<u32>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bits per stored count; counts saturate at 2^width − 1.
    #[arg(long)]
    pub count_width: Option<u8>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Subsample size for the empirical term.
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainMarkovConfig {
    pub corpus: Option<PathBuf>,
    pub corpus_format: CorpusFormat,
    pub vocab_size: Option<u32>,
    pub order: usize,
    pub alpha: f64,
    pub count_width: u8,
    pub delta: f64,
    pub n: u64,
    pub seed: u64,
}

impl Default for TrainMarkovConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            corpus_format: CorpusFormat::Tokens,
            vocab_size: None,
            order: 1,
            alpha: tokenbound_core::markov::DEFAULT_ALPHA,
            count_width: tokenbound_core::markov::DEFAULT_COUNT_WIDTH,
            delta: 0.05,
            n: 10_000,
            seed: 0,
        }
    }
}

pub fn train_markov(args: &TrainMarkovArgs, run: &RunArgs) -> Result<Outcome> {
    let cfg: TrainMarkovConfig = resolve("train-markov", run.config.as_deref(), args)?;
    let corpus = load_corpus(cfg.corpus.as_deref(), cfg.corpus_format, cfg.vocab_size)?;
    let model = SparseMarkov::train_with(&corpus, cfg.order, cfg.alpha, cfg.count_width)?;
    let artifact = model.to_artifact();
    let m = corpus.len() as u64;
    let positions = subsample_positions(m, cfg.n.min(m), cfg.seed)?;
    let tracked: Vec<u32> = MARKOV_TRACKED_K
        .iter()
        .copied()
        .filter(|&k| k < corpus.vocab_size)
        .collect();
    let mut trace = model.trace(&corpus, &positions, tracked, Some(cfg.seed))?;
    trace.header.model_id = format!("markov-k{}", cfg.order);
    let opts = CertifyOptions {
        delta: cfg.delta,
        alpha_mode: AlphaMode::Fixed,
        alpha: Some(cfg.alpha),
        buckets: 0,
        topk: None,
        assembly: AssemblyMode::Subsampled,
    };
    let cert = certify(&trace, artifact.total_bits() as f64, &opts)?;
    let dir = run_dir("train-markov", &cfg, run.out.as_deref())?;
    write_resolved(&dir, &cfg)?;
    write(&dir, "model.artifact", &artifact.to_bytes())?;
    write_trace_file(&dir, &trace)?;
    #[derive(Serialize)]
    struct Extra {
        entries: usize,
        prefixes: usize,
        train_bpd: f64,
    }
    let extra = Extra {
        entries: model.entry_count(),
        prefixes: model.prefix_count(),
        train_bpd: model.nll_bits(&corpus) / corpus.len() as f64,
    };
    let text = format!("entries    {}\n{}", extra.entries, render(&cert));
    finish(&dir, "train-markov", &cfg, Some(&cert), extra, &text)?;
    Ok(outcome(&cert))
}

// ----------------------------------------------------------------- train-toy

/// `dense`, `lora[:r]`, `kronecker:A1xB1`, `monarch[:NBxQ]`.
pub fn parse_parametrization(s: &str, rows: usize, cols: usize) -> Result<Parametrization> {
    let (kind, shape) = s.split_once(':').map_or((s, None), |(k, v)| (k, Some(v)));
    let pair = |v: &str| -> Result<(usize, usize)> {
        let (a, b) = v.split_once('x').ok_or_else(|| bad_input!("expected AxB in {s:?}"))?;
        Ok((
            a.trim().parse().map_err(|_| bad_input!("bad number in {s:?}"))?,
            b.trim().parse().map_err(|_| bad_input!("bad number in {s:?}"))?,
        ))
    };
    Ok(match (kind.trim(), shape) {
        ("dense", None) => Parametrization::Dense,
        ("lora", None) => Parametrization::Lora { rank: 4 },
        ("lora", Some(r)) => Parametrization::Lora {
            rank: r.parse().map_err(|_| bad_input!("bad rank in {s:?}"))?,
        },
        ("kronecker", Some(v)) => {
            let (a1, b1) = pair(v)?;
            Parametrization::Kronecker { a1, b1 }
        }
        ("monarch", None) => Parametrization::square_monarch(rows, cols)?,
        ("monarch", Some(v)) => {
            let (in_blocks, out_blocks) = pair(v)?;
            Parametrization::Monarch { in_blocks, out_blocks }
        }
        _ => return Err(bad_input!("unknown parametrization {s:?}")),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Bag,
    Lagged,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainToyArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub corpus_format: Option<CorpusFormat>,
    #[arg(long)]
    pub vocab_size: Option<u32>,
    /// dense, lora[:r], kronecker:A1xB1 or monarch[:NBxQ].
    #[arg(long)]
    pub parametrization: Option<String>,
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long, value_enum)]
    pub features: Option<FeatureKind>,
    #[arg(long)]
    pub positions: Option<usize>,
    #[arg(long)]
    pub hash_buckets: Option<usize>,
    /// SGD steps (default: one pass over the corpus).
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub levels: Option<u32>,
    #[arg(long)]
    pub subspace_dim: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_enum)]
    pub alpha_mode: Option<AlphaMode>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub buckets: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub tracked_k: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainToyConfig {
    pub corpus: Option<PathBuf>,
    pub corpus_format: CorpusFormat,
    pub vocab_size: Option<u32>,
    pub parametrization: String,
    pub context: usize,
    pub features: FeatureKind,
    pub positions: usize,
    pub hash_buckets: usize,
    pub steps: Option<u64>,
    pub lr: f64,
    pub levels: u32,
    pub subspace_dim: Option<usize>,
    pub batch_size: usize,
    pub n: u64,
    pub seed: u64,
    pub delta: f64,
    pub alpha_mode: AlphaMode,
    pub alpha: Option<f64>,
    pub buckets: usize,
    pub tracked_k: Vec<u32>,
}

impl Default for TrainToyConfig {
    fn default() -> Self {
        let toy = ToyConfig::default();
        Self {
            corpus: None,
            corpus_format: CorpusFormat::Tokens,
            vocab_size: None,
            parametrization: "dense".into(),
            context: toy.context,
            features: FeatureKind::Bag,
            positions: 32,
            hash_buckets: 1 << 16,
            steps: None,
            lr: toy.lr,
            levels: toy.levels,
            subspace_dim: None,
            batch_size: toy.batch_size,
            n: toy.n_subsample,
            seed: 0,
            delta: 0.05,
            alpha_mode: AlphaMode::Grid,
            alpha: None,
            buckets: 8,
            tracked_k: toy.tracked_k,
        }
    }
}

pub fn train_toy(args: &TrainToyArgs, run: &RunArgs) -> Result<Outcome> {
    let cfg: TrainToyConfig = resolve("train-toy", run.config.as_deref(), args)?;
    let corpus = load_corpus(cfg.corpus.as_deref(), cfg.corpus_format, cfg.vocab_size)?;
    let features = match cfg.features {
        FeatureKind::Bag => Features::Bag,
        FeatureKind::Lagged => Features::Lagged {
            positions: cfg.positions,
            hash_buckets: cfg.hash_buckets,
        },
    };
    let dim = tokenbound_core::structured::FeatureMap {
        vocab_size: corpus.vocab_size,
        context: cfg.context,
        features,
    }
    .dim();
    let toy = ToyConfig {
        parametrization: parse_parametrization(&cfg.parametrization, corpus.vocab_size as usize, dim)?,
        context: cfg.context,
        features,
        steps: cfg.steps.unwrap_or(corpus.len() as u64),
        lr: cfg.lr,
        seed: cfg.seed,
        levels: cfg.levels,
        subspace_dim: cfg.subspace_dim,
        batch_size: cfg.batch_size,
        n_subsample: cfg.n,
        tracked_k: cfg.tracked_k.clone(),
    };
    let result = train_toy_model(&corpus, &toy)?;
    let opts = CertifyOptions {
        delta: cfg.delta,
        alpha_mode: cfg.alpha_mode,
        alpha: cfg.alpha,
        buckets: cfg.buckets,
        topk: None,
        assembly: AssemblyMode::Subsampled,
    };
    let cert = certify(&result.trace, result.complexity_bits() as f64, &opts)?;
    let dir = run_dir("train-toy", &cfg, run.out.as_deref())?;
    write_resolved(&dir, &cfg)?;
    write(&dir, "model.artifact", &result.artifact.to_bytes())?;
    write_trace_file(&dir, &result.trace)?;
    #[derive(Serialize)]
    struct Extra {
        params: usize,
        parametrization: Parametrization,
        full_precision_bpd: f64,
        quantized_bpd: f64,
    }
    let extra = Extra {
        params: result.quantized.param_count(),
        parametrization: toy.parametrization,
        full_precision_bpd: result.full_precision.nll_bits_per_token(&corpus),
        quantized_bpd: result.quantized.nll_bits_per_token(&corpus),
    };
    let text = format!(
        "params     {} ({})\ntrain bpd  {:.4} full precision, {:.4} quantized\n{}",
        extra.params,
        cfg.parametrization,
        extra.full_precision_bpd,
        extra.quantized_bpd,
        render(&cert)
    );
    finish(&dir, "train-toy", &cfg, Some(&cert), extra, &text)?;
    Ok(outcome(&cert))
}

// ------------------------------------------------------------------ compress

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    /// Opaque bytes (e.g. an externally quantized checkpoint), gzip-coded.
    Raw,
    /// Little-endian f32 weights, uniformly quantized and arithmetic-coded.
    F32,
    /// Little-endian f64 weights, uniformly quantized and arithmetic-coded.
    F64,
}

#[derive(Debug, Args, Serialize)]
pub struct CompressArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<InputKind>,
    #[arg(long)]
    pub levels: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressConfig {
    pub input: Option<PathBuf>,
    pub kind: InputKind,
    pub levels: u32,
}

impl Default for CompressConfig {
    fn default() -> Self {
        Self {
            input: None,
            kind: InputKind::Raw,
            levels: 16,
        }
    }
}

pub fn compress(args: &CompressArgs, run: &RunArgs) -> Result<Outcome> {
    let cfg: CompressConfig = resolve("compress", run.config.as_deref(), args)?;
    let path = cfg
        .input
        .as_deref()
        .ok_or_else(|| bad_input!("an input path is required"))?;
    let bytes = read_input(path)?;
    let weights = |width: usize| -> Result<Vec<f64>> {
        if bytes.len() % width != 0 {
            return Err(bad_input!(
                "{} bytes is not a whole number of {width}-byte floats",
                bytes.len()
            ));
        }
        Ok(bytes
            .chunks_exact(width)
            .map(|c| match width {
                4 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                _ => f64::from_le_bytes(c.try_into().unwrap()),
            })
            .collect())
    };
    let artifact = match cfg.kind {
        InputKind::Raw => CompressedArtifact::deflate(&bytes, Vec::new())?,
        InputKind::F32 => CompressedArtifact::arithmetic(&quantize_uniform(&weights(4)?, cfg.levels)?, Vec::new())?,
        InputKind::F64 => CompressedArtifact::arithmetic(&quantize_uniform(&weights(8)?, cfg.levels)?, Vec::new())?,
    };
    let dir = run_dir("compress", &cfg, run.out.as_deref())?;
    write_resolved(&dir, &cfg)?;
    write(&dir, "compressed.artifact", &artifact.to_bytes())?;
    #[derive(Serialize)]
    struct Extra {
        input_bytes: usize,
        scheme: Scheme,
        payload_bits: u64,
        header_bits: u64,
        total_bits: u64,
        deflate_bits_of_input: u64,
    }
    let extra = Extra {
        input_bytes: bytes.len(),
        scheme: artifact.scheme,
        payload_bits: artifact.payload_bits,
        header_bits: artifact.header_bits(),
        total_bits: artifact.total_bits(),
        deflate_bits_of_input: deflate_size(&bytes),
    };
    let text = format!(
        "input      {} bytes\nscheme     {:?}\nC          {} bits ({} payload + {} header)\ngzip       {} bits of raw input\n",
        extra.input_bytes, extra.scheme, extra.total_bits, extra.payload_bits, extra.header_bits, extra.deflate_bits_of_input
    );
    finish(&dir, "compress", &cfg, None, extra, &text)?;
    Ok(Outcome::default())
}

// ---------------------------------------------------------------- gen-corpus

#[derive(Debug, Args, Serialize)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub vocab_size: Option<u32>,
    #[arg(long)]
    pub branching: Option<usize>,
    #[arg(long)]
    pub zipf_exponent: Option<f64>,
    #[arg(long)]
    pub min_doc_len: Option<usize>,
    #[arg(long)]
    pub max_doc_len: Option<usize>,
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenCorpusConfig {
    pub vocab_size: u32,
    pub branching: usize,
    pub zipf_exponent: f64,
    pub min_doc_len: usize,
    pub max_doc_len: usize,
    pub tokens: usize,
    pub seed: u64,
}

impl Default for GenCorpusConfig {
    fn default() -> Self {
        let lang = SyntheticLanguage::default();
        Self {
            vocab_size: lang.vocab_size,
            branching: lang.branching,
            zipf_exponent: lang.zipf_exponent,
            min_doc_len: lang.doc_len.0,
            max_doc_len: lang.doc_len.1,
            tokens: 1_000_000,
            seed: 0,
        }
    }
}

/// Writes a seeded synthetic corpus as `corpus.txt`.
pub fn gen_corpus(args: &GenCorpusArgs, run: &RunArgs) -> Result<Outcome> {
    let cfg: GenCorpusConfig = resolve("gen-corpus", run.config.as_deref(), args)?;
    let stream = SyntheticLanguage {
        vocab_size: cfg.vocab_size,
        branching: cfg.branching,
        zipf_exponent: cfg.zipf_exponent,
        doc_len: (cfg.min_doc_len, cfg.max_doc_len),
        seed: cfg.seed,
    }
    .generate(cfg.tokens)?;
    let dir = run_dir("gen-corpus", &cfg, run.out.as_deref())?;
    write_resolved(&dir, &cfg)?;
    let mut buf = Vec::new();
    stream.write_text(&mut buf)?;
    write(&dir, "corpus.txt", &buf)?;
    let text = format!(
        "corpus     {} tokens in {} documents, V = {}\n",
        stream.len(),
        stream.doc_begins().len(),
        stream.vocab_size
    );
    finish(
        &dir,
        "gen-corpus",
        &cfg,
        None,
        serde_json::json!({ "tokens": stream.len() }),
        &text,
    )?;
    Ok(Outcome::default())
}

// ------------------------------------------------------ gen-sequences / memo

#[derive(Debug, Args, Serialize)]
pub struct SequenceArgs {
    /// Maximum operator count of each expression tree.
    #[arg(long)]
    pub complexity: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the random baseline (default: seed + 1).
    #[arg(long)]
    pub random_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceConfig {
    pub complexity: usize,
    pub length: usize,
    pub count: usize,
    pub seed: u64,
    pub random_seed: Option<u64>,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            complexity: sequences::DEFAULT_COMPLEXITY,
            length: sequences::DEFAULT_LENGTH,
            count: sequences::DEFAULT_COUNT,
            seed: 0,
            random_seed: None,
        }
    }
}

impl SequenceConfig {
    fn datasets(&self) -> Result<(sequences::SequenceDataset, sequences::SequenceDataset)> {
        let s = gen_structured(self.complexity, self.length, self.count, self.seed)?;
        let r = gen_random_baseline(&s, self.random_seed.unwrap_or(self.seed.wrapping_add(1)))?;
        Ok((s, r))
    }
}

/// Writes `structured.txt` and `random.txt`, one `BOS digits DELIM`
/// document per line.
pub fn gen_sequences(args: &SequenceArgs, run: &RunArgs) -> Result<Outcome> {
    let cfg: SequenceConfig = resolve("gen-sequences", run.config.as_deref(), args)?;
    let (s, r) = cfg.datasets()?;
    let dir = run_dir("gen-sequences", &cfg, run.out.as_deref())?;
    write_resolved(&dir, &cfg)?;
    for (name, ds) in [("structured.txt", &s), ("random.txt", &r)] {
        let mut buf = Vec::new();
        ds.to_stream().write_text(&mut buf)?;
        write(&dir, name, &buf)?;
    }
    let text = format!(
        "datasets   {} structured and {} random sequences of length {}, V = {}\n",
        s.len(),
        r.len(),
        cfg.length,
        sequences::VOCAB_SIZE
    );
    let extra = serde_json::json!({ "unique_integers": s.unique_integers() });
    finish(&dir, "gen-sequences", &cfg, None, extra, &text)?;
    Ok(Outcome::default())
}

#[derive(Debug, Args, Serialize)]
pub struct MemorizationArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: SequenceArgs,
    /// Quantization level counts to sweep.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<u32>>,
    /// Passes over each dataset.
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorizationConfig {
    #[serde(flatten)]
    pub data: SequenceConfig,
    pub levels: Vec<u32>,
    pub epochs: u64,
    pub lr: f64,
}

impl Default for MemorizationConfig {
    fn default() -> Self {
        let toy = sequences::memorization_config(1);
        Self {
            data: SequenceConfig::default(),
            levels: vec![2, 3, 4, 6, 8, 12, 16, 32, 64, 256],
            epochs: toy.steps,
            lr: toy.lr,
        }
    }
}

/// Trains on both datasets and writes `memorization.csv` with training
/// accuracy per quantization level.
pub fn memorization(args: &MemorizationArgs, run: &RunArgs) -> Result<Outcome> {
    let cfg: MemorizationConfig = resolve("memorization", run.config.as_deref(), args)?;
    let (s, r) = cfg.data.datasets()?;
    let tokens = s.to_stream().len();
    let mut toy = sequences::memorization_config(tokens);
    toy.steps = cfg.epochs * tokens as u64;
    toy.lr = cfg.lr;
    toy.seed = cfg.data.seed;
    let rows = memorization_experiment(&[&s, &r], &toy, &cfg.levels)?;
    let dir = run_dir("memorization", &cfg, run.out.as_deref())?;
    write_resolved(&dir, &cfg)?;
    let mut csv = String::from("levels,structured,random\n");
    let mut text = format!("{:>12} {:>11} {:>8}\n", "levels", "structured", "random");
    let acc = |kind, l| {
        rows.iter()
            .find(|row| row.kind == kind && row.levels == l)
            .map_or(f64::NAN, |row| row.accuracy)
    };
    let all: Vec<Option<u32>> = std::iter::once(None)
        .chain(cfg.levels.iter().copied().map(Some))
        .collect();
    for l in all {
        let (a, b) = (
            acc(sequences::SequenceKind::Structured, l),
            acc(sequences::SequenceKind::Random, l),
        );
        let label = l.map_or("full".to_string(), |l| l.to_string());
        csv.push_str(&format!("{label},{a},{b}\n"));
        text.push_str(&format!("{label:>12} {:>10.2}% {:>7.2}%\n", 100.0 * a, 100.0 * b));
    }
    write(&dir, "memorization.csv", csv.as_bytes())?;
    finish(
        &dir,
        "memorization",
        &cfg,
        None,
        serde_json::json!({ "rows": rows }),
        &text,
    )?;
    Ok(Outcome::default())
}

// -------------------------------------------------------------------- report

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory containing finished runs.
    pub dir: PathBuf,
}

/// Aggregates every `report.json` under a directory into `summary.md` and
/// `summary.csv` there.
pub fn report(args: &ReportArgs) -> Result<Outcome> {
    if !args.dir.is_dir() {
        return Err(bad_input!("{} is not a directory", args.dir.display()));
    }
    let rows = crate::summary::collect(&args.dir)?;
    if rows.is_empty() {
        eprintln!("warning: no certified runs under {}", args.dir.display());
    }
    let md = crate::summary::markdown(&rows);
    write(&args.dir, "summary.md", md.as_bytes())?;
    write(&args.dir, "summary.csv", crate::summary::csv(&rows).as_bytes())?;
    print!("{md}");
    Ok(Outcome::default())
}

// ------------------------------------------------------------- convert-trace

#[derive(Debug, Args)]
pub struct ConvertTraceArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub format: TraceFormatArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TraceFormatArg {
    Text,
    Binary,
}

pub fn convert_trace(args: &ConvertTraceArgs) -> Result<Outcome> {
    let trace = load_trace(Some(&args.input))?;
    let format = match args.format {
        TraceFormatArg::Text => TraceFormat::Text,
        TraceFormatArg::Binary => TraceFormat::Binary,
    };
    let mut buf = Vec::new();
    write_trace(&trace, format, &mut buf)?;
    std::fs::write(&args.output, buf).with_context(|| format!("writing {}", args.output.display()))?;
    Ok(Outcome::default())
}
