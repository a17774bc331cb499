//! Turning a trace plus a complexity into a full set of certified bounds,
//! and printing them.

use std::fmt::Write as _;

use anyhow::Result;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use tokenbound_core::bound::{evaluate_bpd_bound_with, evaluate_topk_bound_with, Assembly, BoundResult, Metric};
use tokenbound_core::smoothing::{
    grid_search_global_alpha, optimize_per_token_alpha, SmoothingPlan, ALPHA_GRID_POINTS,
};
use tokenbound_core::trace::RiskTrace;

use crate::config::bad_input;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    /// Best point of the fixed global grid.
    Grid,
    /// Quantile buckets of p, one rate each.
    PerToken,
    /// The rate given by `alpha`, chosen in advance.
    Fixed,
    /// Rates stored on the trace records.
    Recorded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AssemblyMode {
    /// Full-sequence when the trace has every position and no subsample seed.
    #[default]
    Auto,
    Subsampled,
    FullSequence,
}

/// Bits charged for picking one point of the global grid.
pub fn grid_index_bits() -> f64 {
    (ALPHA_GRID_POINTS as f64).log2().ceil()
}

/// Bits charged for a per-token plan: every edge and rate as a 64-bit float.
pub fn plan_bits(plan: &SmoothingPlan) -> f64 {
    match plan {
        SmoothingPlan::PerToken {
            bucket_edges,
            bucket_alphas,
        } => 64.0 * (bucket_edges.len() + bucket_alphas.len()) as f64,
        _ => 0.0,
    }
}

#[derive(Debug, Clone)]
pub struct CertifyOptions {
    pub delta: f64,
    pub alpha_mode: AlphaMode,
    pub alpha: Option<f64>,
    pub buckets: usize,
    pub topk: Option<Vec<u32>>,
    pub assembly: AssemblyMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub model_id: String,
    pub vocab_size: u32,
    pub m: u64,
    pub n: u64,
    pub model_bits: f64,
    /// Smoothing-plan description cost, charged to the BPD bound only.
    pub plan_bits: f64,
    pub alpha_mode: AlphaMode,
    pub assembly: Assembly,
    pub smoothing: SmoothingPlan,
    pub bpd: BoundResult,
    pub topk: Vec<BoundResult>,
}

impl Certificate {
    pub fn all(&self) -> impl Iterator<Item = &BoundResult> {
        std::iter::once(&self.bpd).chain(&self.topk)
    }

    pub fn vacuous(&self) -> bool {
        self.all().any(|r| !r.non_vacuous)
    }
}

pub fn certify(trace: &RiskTrace, model_bits: f64, opts: &CertifyOptions) -> Result<Certificate> {
    if !(model_bits.is_finite() && model_bits >= 1.0) {
        return Err(bad_input!("complexity must be at least 1 bit, got {model_bits}"));
    }
    let full = trace.header.subsample_seed.is_none() && trace.len() as u64 == trace.total_tokens();
    let assembly = match opts.assembly {
        AssemblyMode::Auto if full => Assembly::FullSequence,
        AssemblyMode::Auto | AssemblyMode::Subsampled => Assembly::Subsampled,
        AssemblyMode::FullSequence => Assembly::FullSequence,
    };
    let (plan, extra_bits) = match opts.alpha_mode {
        AlphaMode::Fixed => {
            let alpha = opts.alpha.ok_or_else(|| bad_input!("alpha-mode fixed needs --alpha"))?;
            (SmoothingPlan::global(alpha)?, 0.0)
        }
        AlphaMode::Grid => {
            let bits = grid_index_bits();
            let (alpha, _) = grid_search_global_alpha(trace, model_bits + bits, opts.delta)?;
            (SmoothingPlan::global(alpha)?, bits)
        }
        AlphaMode::PerToken => {
            let fit = optimize_per_token_alpha(trace, model_bits, opts.delta, opts.buckets)?;
            let bits = plan_bits(&fit.plan);
            (fit.plan, bits)
        }
        AlphaMode::Recorded => (SmoothingPlan::Recorded, 0.0),
    };
    let bpd = evaluate_bpd_bound_with(trace, &plan, model_bits + extra_bits, opts.delta, assembly)?;
    let ks = opts.topk.clone().unwrap_or_else(|| trace.header.tracked_k.clone());
    let topk = ks
        .iter()
        .map(|&k| evaluate_topk_bound_with(trace, k, model_bits, opts.delta, assembly))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Certificate {
        model_id: trace.header.model_id.clone(),
        vocab_size: trace.vocab_size(),
        m: trace.total_tokens(),
        n: trace.len() as u64,
        model_bits,
        plan_bits: extra_bits,
        alpha_mode: opts.alpha_mode,
        assembly,
        smoothing: plan,
        bpd,
        topk,
    })
}

pub fn describe_plan(plan: &SmoothingPlan) -> String {
    match plan {
        SmoothingPlan::Global { alpha } => format!("global α = {alpha:.6}"),
        SmoothingPlan::PerToken { bucket_alphas, .. } => {
            let alphas: Vec<String> = bucket_alphas.iter().map(|a| format!("{a:.3e}")).collect();
            format!("{} buckets, α = [{}]", bucket_alphas.len(), alphas.join(", "))
        }
        SmoothingPlan::Recorded => "per-record α from the trace".into(),
    }
}

fn show(metric: Metric, x: f64) -> String {
    match metric {
        Metric::Bpd => format!("{x:.4}"),
        Metric::TopK(_) => format!("{:.2}%", 100.0 * x),
    }
}

/// Human-readable table of a certificate.
pub fn render(cert: &Certificate) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "model      {}",
        if cert.model_id.is_empty() { "-" } else { &cert.model_id }
    );
    let _ = writeln!(s, "V / m / n  {} / {} / {}", cert.vocab_size, cert.m, cert.n);
    let _ = writeln!(
        s,
        "C          {} bits (model) + {} bits (smoothing plan)",
        cert.model_bits, cert.plan_bits
    );
    let _ = writeln!(s, "smoothing  {}", describe_plan(&cert.smoothing));
    let _ = writeln!(s, "delta      {}", cert.bpd.delta);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<7} {:>10} {:>10} {:>10} {:>10} {:>10}  verdict",
        "metric", "empirical", "complexity", "subsample", "bound", "threshold"
    );
    for r in cert.all() {
        let _ = writeln!(
            s,
            "{:<7} {:>10} {:>10} {:>10} {:>10} {:>10}  {}",
            r.metric.to_string(),
            show(r.metric, r.empirical_term),
            show(r.metric, r.complexity_term),
            show(r.metric, r.subsample_term),
            show(r.metric, r.bound),
            show(r.metric, r.vacuity_threshold),
            if r.non_vacuous { "non-vacuous" } else { "vacuous" }
        );
    }
    s
}
