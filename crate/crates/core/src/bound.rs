//! Token-level martingale generalization bounds.
//!
//! For a hypothesis `h` whose per-token negative log-likelihood lies in an
//! interval of width `Δ_i` bits, Azuma's inequality together with a union
//! bound over a prefix-free prior gives, with probability at least `1 − δ1`,
//!
//! ```text
//! (1/m) Σ E[−log2 p_h(X_i | x_<i) | x_<i]
//!     ≤ −(1/m) log2 p_h(x_≤m) + Δ̂ · sqrt((log 1/P(h) + log 1/δ1) / (2m))
//! ```
//!
//! with `Δ̂ = sqrt(mean Δ_i²)`. The empirical term is estimated from `n`
//! positions drawn by a random permutation, which costs a second
//! Hoeffding term `Δ̂ · sqrt(log(1/δ2) / (2n))`. The overall failure
//! probability is split as `δ1 = δ n/(n+m)`, `δ2 = δ m/(n+m)`.
//!
//! Risks and interval widths are measured in bits. Everything under the
//! square roots is in nats, because it comes from the exponent of the
//! concentration inequality; `log 1/P(h)` is charged as
//! `C ln 2 + 2 ln C` for a code of `C` bits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::smoothing::{interval_width, smooth_prob, SmoothingPlan};
use crate::trace::RiskTrace;

/// Which risk a [`BoundResult`] certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "snake_case")]
pub enum Metric {
    /// Bits per dimension (log-loss).
    Bpd,
    /// Top-k 0–1 error.
    TopK(u32),
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Bpd => write!(f, "bpd"),
            Metric::TopK(k) => write!(f, "top{k}"),
        }
    }
}

/// How the three terms are assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assembly {
    /// Records are a random subsample; `δ` is split between the Azuma and
    /// subsampling terms.
    #[default]
    Subsampled,
    /// Records are the whole certified sequence (`n = m`); no subsampling
    /// term and `δ1 = δ`.
    FullSequence,
}

/// Inputs to the concentration terms.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundContext {
    pub delta: f64,
    pub complexity_bits: f64,
    pub m: u64,
    pub n: u64,
    /// `sqrt(mean Δ_i²)` over the `n` records.
    pub delta_hat: f64,
}

impl BoundContext {
    pub fn from_widths(delta: f64, complexity_bits: f64, m: u64, interval_widths: &[f64]) -> Result<Self> {
        if let Some(w) = interval_widths.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid(format!(
                "interval width {w} is not a finite nonnegative number"
            )));
        }
        let squares: Vec<f64> = interval_widths.iter().map(|w| w * w).collect();
        Self::from_sum_of_squares(
            delta,
            complexity_bits,
            m,
            interval_widths.len() as u64,
            pairwise_sum(&squares),
        )
    }

    pub fn from_sum_of_squares(delta: f64, complexity_bits: f64, m: u64, n: u64, sum_sq: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("bound needs at least one record"));
        }
        Ok(Self {
            delta,
            complexity_bits,
            m,
            n,
            delta_hat: (sum_sq / n as f64).sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub metric: Metric,
    /// Mean risk over the records (bits/token, or error rate).
    pub empirical_term: f64,
    /// Azuma term charged with the compressed size and `δ1`.
    pub complexity_term: f64,
    /// Subsampling term charged with `δ2`.
    pub subsample_term: f64,
    pub bound: f64,
    pub vacuity_threshold: f64,
    pub non_vacuous: bool,
    pub delta_hat: f64,
    pub complexity_bits: f64,
    pub delta: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub m: u64,
    pub n: u64,
}

/// Splits the failure probability between the Azuma term (`δ1`) and the
/// subsampling term (`δ2`).
pub fn split_failure_probability(delta: f64, m: u64, n: u64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta = {delta} outside (0, 1)")));
    }
    if n == 0 || n > m {
        return Err(Error::invalid(format!("need 1 <= n <= m, got n = {n}, m = {m}")));
    }
    let total = n as f64 + m as f64;
    let delta1 = delta * (n as f64 / total);
    let delta2 = delta * (m as f64 / total);
    Ok((delta1, delta2))
}

/// Prior cost `log 1/P(h) <= C ln 2 + 2 ln C` in nats for a `C`-bit code.
pub fn complexity_nats(c_bits: f64) -> Result<f64> {
    if !(c_bits >= 1.0 && c_bits.is_finite()) {
        return Err(Error::invalid(format!(
            "compressed size must be a finite number of at least 1 bit, got {c_bits}"
        )));
    }
    Ok(c_bits * std::f64::consts::LN_2 + 2.0 * c_bits.ln())
}

/// `Δ̂ · sqrt((complexity_nats + ln 1/δ1) / (2m))`, in the units of `Δ̂`.
pub fn azuma_term(delta_hat: f64, complexity_nats: f64, delta1: f64, m: u64) -> Result<f64> {
    if !(delta_hat >= 0.0 && delta_hat.is_finite()) {
        return Err(Error::invalid(format!(
            "delta_hat = {delta_hat} must be finite and >= 0"
        )));
    }
    if !(delta1 > 0.0 && delta1 <= 1.0) {
        return Err(Error::invalid(format!("delta1 = {delta1} outside (0, 1]")));
    }
    if m == 0 {
        return Err(Error::invalid("m must be positive"));
    }
    if complexity_nats < 0.0 {
        return Err(Error::invalid("complexity must be nonnegative"));
    }
    let numerator = complexity_nats - delta1.ln();
    Ok(delta_hat * (numerator / (2.0 * m as f64)).sqrt())
}

/// `Δ̂ · sqrt(ln(1/δ2) / (2n))`.
pub fn subsample_penalty(delta_hat: f64, n: u64, delta2: f64) -> Result<f64> {
    if !(delta_hat >= 0.0 && delta_hat.is_finite()) {
        return Err(Error::invalid(format!(
            "delta_hat = {delta_hat} must be finite and >= 0"
        )));
    }
    if !(delta2 > 0.0 && delta2 <= 1.0) {
        return Err(Error::invalid(format!("delta2 = {delta2} outside (0, 1]")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    Ok(delta_hat * (-delta2.ln() / (2.0 * n as f64)).sqrt())
}

/// Random-guess BPD, `log2 V`.
pub fn bpd_vacuity_threshold(vocab_size: u32) -> f64 {
    (vocab_size as f64).log2()
}

/// Random-guess top-k error, `1 − k/V`.
pub fn topk_vacuity_threshold(k: u32, vocab_size: u32) -> f64 {
    1.0 - k as f64 / vocab_size as f64
}

/// Combines a mean risk with the concentration terms.
pub fn assemble(
    metric: Metric,
    empirical_term: f64,
    ctx: &BoundContext,
    vacuity_threshold: f64,
    assembly: Assembly,
) -> Result<BoundResult> {
    let nats = complexity_nats(ctx.complexity_bits)?;
    let (delta1, delta2, subsample_term) = match assembly {
        Assembly::Subsampled => {
            let (d1, d2) = split_failure_probability(ctx.delta, ctx.m, ctx.n)?;
            (d1, d2, subsample_penalty(ctx.delta_hat, ctx.n, d2)?)
        }
        Assembly::FullSequence => {
            if ctx.n != ctx.m {
                return Err(Error::invalid(format!(
                    "full-sequence evaluation needs n = m, got n = {}, m = {}",
                    ctx.n, ctx.m
                )));
            }
            if !(ctx.delta > 0.0 && ctx.delta < 1.0) {
                return Err(Error::invalid(format!("delta = {} outside (0, 1)", ctx.delta)));
            }
            (ctx.delta, 0.0, 0.0)
        }
    };
    let complexity_term = azuma_term(ctx.delta_hat, nats, delta1, ctx.m)?;
    let bound = empirical_term + complexity_term + subsample_term;
    Ok(BoundResult {
        metric,
        empirical_term,
        complexity_term,
        subsample_term,
        bound,
        vacuity_threshold,
        non_vacuous: bound < vacuity_threshold,
        delta_hat: ctx.delta_hat,
        complexity_bits: ctx.complexity_bits,
        delta: ctx.delta,
        delta1,
        delta2,
        m: ctx.m,
        n: ctx.n,
    })
}

/// Per-record smoothed NLL (bits) and interval width (bits).
pub(crate) fn bpd_terms(trace: &RiskTrace, plan: &SmoothingPlan) -> Result<(Vec<f64>, Vec<f64>)> {
    let v = trace.vocab_size();
    let mut losses = Vec::with_capacity(trace.len());
    let mut widths = Vec::with_capacity(trace.len());
    for (i, rec) in trace.records.iter().enumerate() {
        let alpha = plan.alpha_for(rec).map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::invalid(format!("record {i}: {msg}")),
            other => other,
        })?;
        losses.push(-smooth_prob(rec.p_true, alpha, v).log2());
        widths.push(interval_width(alpha, v)?);
    }
    Ok((losses, widths))
}

/// BPD bound with an explicit [`Assembly`].
pub fn evaluate_bpd_bound_with(
    trace: &RiskTrace,
    plan: &SmoothingPlan,
    c_bits: f64,
    delta: f64,
    assembly: Assembly,
) -> Result<BoundResult> {
    if trace.is_empty() {
        return Err(Error::invalid("trace has no records"));
    }
    let (losses, widths) = bpd_terms(trace, plan)?;
    let empirical = pairwise_sum(&losses) / losses.len() as f64;
    let ctx = BoundContext::from_widths(delta, c_bits, trace.total_tokens(), &widths)?;
    assemble(
        Metric::Bpd,
        empirical,
        &ctx,
        bpd_vacuity_threshold(trace.vocab_size()),
        assembly,
    )
}

/// Certified bits-per-dimension bound for a subsampled trace.
pub fn evaluate_bpd_bound(trace: &RiskTrace, plan: &SmoothingPlan, c_bits: f64, delta: f64) -> Result<BoundResult> {
    evaluate_bpd_bound_with(trace, plan, c_bits, delta, Assembly::Subsampled)
}

/// Certified bound when the trace covers the whole sequence (`n = m`).
pub fn evaluate_bpd_bound_full_sequence(
    trace: &RiskTrace,
    plan: &SmoothingPlan,
    c_bits: f64,
    delta: f64,
) -> Result<BoundResult> {
    evaluate_bpd_bound_with(trace, plan, c_bits, delta, Assembly::FullSequence)
}

/// Certified top-k error bound. Records whose rank was not tracked count as
/// errors.
pub fn evaluate_topk_bound(trace: &RiskTrace, k: u32, c_bits: f64, delta: f64) -> Result<BoundResult> {
    evaluate_topk_bound_with(trace, k, c_bits, delta, Assembly::Subsampled)
}

/// Top-k bound with an explicit [`Assembly`].
pub fn evaluate_topk_bound_with(
    trace: &RiskTrace,
    k: u32,
    c_bits: f64,
    delta: f64,
    assembly: Assembly,
) -> Result<BoundResult> {
    if !trace.header.tracked_k.contains(&k) {
        return Err(Error::UnsupportedK {
            k,
            tracked: trace.header.tracked_k.clone(),
        });
    }
    if trace.is_empty() {
        return Err(Error::invalid("trace has no records"));
    }
    let risks: Vec<f64> = trace
        .records
        .iter()
        .map(|r| match r.topk_rank {
            Some(rank) if rank <= k => 0.0,
            _ => 1.0,
        })
        .collect();
    let empirical = pairwise_sum(&risks) / risks.len() as f64;
    let ctx = BoundContext::from_sum_of_squares(
        delta,
        c_bits,
        trace.total_tokens(),
        risks.len() as u64,
        risks.len() as f64,
    )?;
    assemble(
        Metric::TopK(k),
        empirical,
        &ctx,
        topk_vacuity_threshold(k, trace.vocab_size()),
        assembly,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{RiskRecord, TraceHeader};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn trace(v: u32, m: u64, ps: &[f64], ranks: &[Option<u32>]) -> RiskTrace {
        let records = ps
            .iter()
            .zip(ranks)
            .enumerate()
            .map(|(i, (&p, &r))| RiskRecord::new(p, r, i == 0))
            .collect();
        RiskTrace::new(
            TraceHeader {
                vocab_size: v,
                total_tokens: m,
                model_id: "test".into(),
                tracked_k: vec![1, 5, 100],
                subsample_seed: None,
            },
            records,
        )
        .unwrap()
    }

    #[test]
    fn split_examples() {
        let (d1, d2) = split_failure_probability(0.05, 9_000_000_000, 10_000).unwrap();
        assert!(rel(d1, 5.555_549_382_722_908e-8) < 1e-12);
        assert!(rel(d2, 0.049_999_944_444_506_17) < 1e-12);
        assert_eq!(split_failure_probability(0.05, 7, 7).unwrap(), (0.025, 0.025));
        assert_eq!(split_failure_probability(0.3, 1, 1).unwrap(), (0.15, 0.15));
        assert!(split_failure_probability(0.05, 3, 4).is_err());
        assert!(split_failure_probability(1.0, 3, 3).is_err());
        assert!(split_failure_probability(0.0, 3, 3).is_err());
    }

    #[test]
    fn complexity_examples() {
        assert_eq!(complexity_nats(1.0).unwrap(), std::f64::consts::LN_2);
        assert!(rel(complexity_nats(8.0).unwrap(), 9.704_060_527_839_234) < 1e-14);
        let big = complexity_nats(2f64.powi(33)).unwrap();
        assert!(rel(big, 5_954_088_989.386_858) < 1e-14);
        assert!(complexity_nats(0.5).is_err());
    }

    #[test]
    fn azuma_examples() {
        assert_eq!(azuma_term(3.0, 0.0, 1.0, 10).unwrap(), 0.0);
        let m = 1234;
        let c = 2.0 * m as f64 * std::f64::consts::LN_2;
        assert!(rel(azuma_term(1.0, c, 1.0, m).unwrap(), 0.832_554_611_157_697_8) < 1e-14);
        assert!(azuma_term(1.0, 1.0, 0.0, 5).is_err());
    }

    #[test]
    fn subsample_examples() {
        assert_eq!(subsample_penalty(2.0, 10, 1.0).unwrap(), 0.0);
        let p = subsample_penalty(1.0, 10_000, 0.05).unwrap();
        assert!(rel(p, 0.012_238_734_153_404_083) < 1e-14);
        let q = subsample_penalty(1.0, 20_000, 0.05).unwrap();
        assert!(rel(q, p / 2f64.sqrt()) < 1e-14);
    }

    #[test]
    fn uniform_model_is_exactly_log2_v() {
        for v in [2u32, 3, 10, 1000, 50_257] {
            let ps = vec![1.0 / v as f64; 7];
            let t = trace(v, 100, &ps, &[None; 7]);
            for alpha in [1e-5, 0.1, 0.5, 1.0] {
                let r = evaluate_bpd_bound(&t, &SmoothingPlan::global(alpha).unwrap(), 10.0, 0.05).unwrap();
                assert!(rel(r.empirical_term, (v as f64).log2()) < 1e-12, "v={v} alpha={alpha}");
            }
        }
    }

    #[test]
    fn three_record_hand_example() {
        let t = trace(4, 3, &[1.0, 0.5, 0.25], &[Some(1); 3]);
        let r = evaluate_bpd_bound(&t, &SmoothingPlan::global(0.5).unwrap(), 1.0, 0.5).unwrap();
        assert!(rel(r.empirical_term, 1.364_369_801_463_827_2) < 1e-10);
        assert!(rel(r.complexity_term, 1.366_930_705_240_321_3) < 1e-10);
        assert!(rel(r.subsample_term, 1.116_094_247_193_847_6) < 1e-10);
        assert!(rel(r.bound, 3.847_394_753_897_996) < 1e-10);
        assert!(rel(r.delta_hat, 2.321_928_094_887_362) < 1e-10);
        assert_eq!(r.vacuity_threshold, 2.0);
        assert!(!r.non_vacuous);
    }

    #[test]
    fn vacuity_thresholds() {
        assert_eq!(format!("{:.2}", bpd_vacuity_threshold(50_257)), "15.62");
        assert!((topk_vacuity_threshold(100, 50_257) - 0.99801).abs() < 1e-5);
    }

    #[test]
    fn topk_examples() {
        let t = trace(50, 20, &[0.5; 10], &(1..=10).map(Some).collect::<Vec<_>>());
        let r = evaluate_topk_bound(&t, 5, 8.0, 0.05).unwrap();
        assert_eq!(r.empirical_term, 0.5);
        assert_eq!(r.delta_hat, 1.0);
        assert!((r.vacuity_threshold - 0.9).abs() < 1e-15);

        let perfect = trace(50, 20, &[0.5; 4], &[Some(1); 4]);
        for k in [1, 5, 100] {
            assert_eq!(evaluate_topk_bound(&perfect, k, 8.0, 0.05).unwrap().empirical_term, 0.0);
        }
        assert!(matches!(
            evaluate_topk_bound(&perfect, 3, 8.0, 0.05),
            Err(Error::UnsupportedK { k: 3, .. })
        ));
    }

    #[test]
    fn missing_rank_counts_as_error() {
        let t = trace(50, 20, &[0.5; 2], &[None, Some(1)]);
        assert_eq!(evaluate_topk_bound(&t, 1, 8.0, 0.05).unwrap().empirical_term, 0.5);
    }

    #[test]
    fn full_sequence_matches_direct_evaluation() {
        let ps = [0.9, 0.2, 0.4, 0.05];
        let t = trace(8, 4, &ps, &[None; 4]);
        let alpha = 0.2;
        let r = evaluate_bpd_bound_full_sequence(&t, &SmoothingPlan::global(alpha).unwrap(), 40.0, 0.05).unwrap();
        let emp: f64 = ps
            .iter()
            .map(|p| -((1.0 - alpha) * p + alpha / 8.0).log2())
            .sum::<f64>()
            / 4.0;
        let width = (1.0 + (1.0 - alpha) * 8.0 / alpha).log2();
        let direct = emp + width * ((40.0 * 2f64.ln() + 2.0 * 40f64.ln() + (1.0 / 0.05f64).ln()) / 8.0).sqrt();
        assert!(rel(r.bound, direct) < 1e-14);
        assert_eq!(r.subsample_term, 0.0);

        let partial = trace(8, 5, &ps, &[None; 4]);
        assert!(
            evaluate_bpd_bound_full_sequence(&partial, &SmoothingPlan::global(alpha).unwrap(), 40.0, 0.05).is_err()
        );
    }

    #[test]
    fn rejects_zero_alpha() {
        let t = trace(8, 4, &[0.5], &[None]);
        let mut plan = SmoothingPlan::Recorded;
        assert!(evaluate_bpd_bound(&t, &plan, 4.0, 0.05).is_err());
        plan = SmoothingPlan::Global { alpha: 0.0 };
        assert!(evaluate_bpd_bound(&t, &plan, 4.0, 0.05).is_err());
    }

    #[test]
    fn context_delta_hat_is_rms() {
        let ctx = BoundContext::from_widths(0.05, 8.0, 10, &[1.0, 2.0, 3.0]).unwrap();
        assert!(rel(ctx.delta_hat * ctx.delta_hat, 14.0 / 3.0) < 1e-12);
        assert!(BoundContext::from_widths(0.05, 8.0, 10, &[]).is_err());
        assert!(BoundContext::from_widths(0.05, 8.0, 10, &[f64::INFINITY]).is_err());
    }
}
