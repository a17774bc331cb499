//! Prediction smoothing.
//!
//! Mixing the model's next-token distribution with the uniform one at rate
//! `α` keeps every smoothed log-loss inside
//! `[−log2(1 − α + α/V), −log2(α/V)]`, an interval of width
//! `log2(1 + (1 − α) V / α)` bits. Smaller `α` trusts the model more but
//! widens the interval that multiplies the complexity terms of the bound.
//!
//! Two ways to pick `α` are provided: a global grid search, and a per-token
//! rate that depends on which confidence bucket the model's probability
//! falls in, tuned by coordinate descent on the full bound.

use serde::{Deserialize, Serialize};

use crate::bound::{assemble, bpd_vacuity_threshold, evaluate_bpd_bound, Assembly, BoundContext, BoundResult, Metric};
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::trace::{RiskRecord, RiskTrace};

/// Number of points in the global `α` grid.
pub const ALPHA_GRID_POINTS: usize = 25;
/// Smallest `α` on the grid.
pub const ALPHA_GRID_MIN: f64 = 1e-5;

/// `(1 − α) p + α / V`.
pub fn smooth_prob(p: f64, alpha: f64, vocab_size: u32) -> f64 {
    (1.0 - alpha) * p + alpha / vocab_size as f64
}

/// Width in bits of the interval containing every smoothed log-loss.
pub fn interval_width(alpha: f64, vocab_size: u32) -> Result<f64> {
    check_alpha(alpha)?;
    let v = vocab_size as f64;
    Ok(((1.0 - alpha) * v / alpha).ln_1p() / std::f64::consts::LN_2)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("smoothing rate alpha = {alpha} outside (0, 1]")))
    }
}

/// The 25 log-spaced smoothing rates from `1e-5` to `1`, ascending.
pub fn alpha_grid() -> Vec<f64> {
    log_grid(ALPHA_GRID_MIN, 1.0, ALPHA_GRID_POINTS)
}

pub(crate) fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2);
    let (a, b) = (lo.log10(), hi.log10());
    let mut g: Vec<f64> = (0..points)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64))
        .collect();
    g[0] = lo;
    g[points - 1] = hi;
    g
}

/// How each record's smoothing rate is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SmoothingPlan {
    Global {
        alpha: f64,
    },
    /// `bucket_edges` partition `[0, 1]`; a record uses the rate of the
    /// bucket its `p_true` falls in (the last bucket is closed on the right).
    PerToken {
        bucket_edges: Vec<f64>,
        bucket_alphas: Vec<f64>,
    },
    /// Use the `alpha` stored on each record.
    Recorded,
}

impl SmoothingPlan {
    pub fn global(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(SmoothingPlan::Global { alpha })
    }

    pub fn per_token(bucket_edges: Vec<f64>, bucket_alphas: Vec<f64>) -> Result<Self> {
        let plan = SmoothingPlan::PerToken {
            bucket_edges,
            bucket_alphas,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SmoothingPlan::Global { alpha } => check_alpha(*alpha),
            SmoothingPlan::PerToken {
                bucket_edges,
                bucket_alphas,
            } => {
                if bucket_edges.len() < 2 || bucket_alphas.len() + 1 != bucket_edges.len() {
                    return Err(Error::invalid(format!(
                        "{} bucket edges cannot hold {} buckets",
                        bucket_edges.len(),
                        bucket_alphas.len()
                    )));
                }
                if bucket_edges[0] != 0.0 || *bucket_edges.last().unwrap() != 1.0 {
                    return Err(Error::invalid("bucket edges must start at 0 and end at 1"));
                }
                if bucket_edges
                    .windows(2)
                    .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
                {
                    return Err(Error::invalid("bucket edges must be strictly increasing"));
                }
                bucket_alphas.iter().try_for_each(|&a| check_alpha(a))
            }
            SmoothingPlan::Recorded => Ok(()),
        }
    }

    /// Bucket index for a probability under a per-token plan.
    pub fn bucket_of(edges: &[f64], p: f64) -> usize {
        let buckets = edges.len() - 1;
        edges.partition_point(|&e| e <= p).saturating_sub(1).min(buckets - 1)
    }

    pub fn alpha_for(&self, record: &RiskRecord) -> Result<f64> {
        let alpha = match self {
            SmoothingPlan::Global { alpha } => *alpha,
            SmoothingPlan::PerToken {
                bucket_edges,
                bucket_alphas,
            } => bucket_alphas[Self::bucket_of(bucket_edges, record.p_true)],
            SmoothingPlan::Recorded => record
                .alpha
                .ok_or_else(|| Error::invalid("record carries no smoothing rate"))?,
        };
        check_alpha(alpha)?;
        Ok(alpha)
    }
}

/// Best constant `α` on the grid. Ties go to the larger `α`.
pub fn grid_search_global_alpha(trace: &RiskTrace, c_bits: f64, delta: f64) -> Result<(f64, BoundResult)> {
    let mut best: Option<(f64, BoundResult)> = None;
    for alpha in alpha_grid() {
        let result = evaluate_bpd_bound(trace, &SmoothingPlan::Global { alpha }, c_bits, delta)?;
        // grid is ascending, so `<=` keeps the largest alpha among ties
        if best.as_ref().is_none_or(|(_, b)| result.bound <= b.bound) {
            best = Some((alpha, result));
        }
    }
    Ok(best.expect("grid is nonempty"))
}

/// Result of [`optimize_per_token_alpha`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub plan: SmoothingPlan,
    pub result: BoundResult,
    /// Global grid optimum the descent started from.
    pub initial_alpha: f64,
    /// Objective after initialization and after every accepted move.
    pub objective_history: Vec<f64>,
}

/// Bucket edges at midpoints between order statistics of `p_true`, so each
/// bucket holds roughly the same number of records. Duplicate edges are
/// merged, so fewer than `n_buckets` buckets may come back.
pub fn quantile_bucket_edges(trace: &RiskTrace, n_buckets: usize) -> Vec<f64> {
    let mut ps: Vec<f64> = trace.records.iter().map(|r| r.p_true).collect();
    ps.sort_by(f64::total_cmp);
    let mut edges = vec![0.0];
    for b in 1..n_buckets {
        let j = b * ps.len() / n_buckets;
        if j == 0 || j >= ps.len() || ps[j - 1] == ps[j] {
            continue;
        }
        let edge = 0.5 * (ps[j - 1] + ps[j]);
        if edge > *edges.last().unwrap() && edge < 1.0 {
            edges.push(edge);
        }
    }
    edges.push(1.0);
    edges
}

/// Per-bucket view of a trace used by the descent objective.
struct Buckets<'a> {
    members: Vec<Vec<f64>>,
    trace: &'a RiskTrace,
}

impl Buckets<'_> {
    fn loss_sum(&self, b: usize, alpha: f64) -> f64 {
        let v = self.trace.vocab_size();
        let losses: Vec<f64> = self.members[b]
            .iter()
            .map(|&p| -smooth_prob(p, alpha, v).log2())
            .collect();
        pairwise_sum(&losses)
    }
}

struct Objective<'a> {
    buckets: Buckets<'a>,
    c_bits: f64,
    delta: f64,
    loss_sums: Vec<f64>,
    alphas: Vec<f64>,
}

impl Objective<'_> {
    fn value_with(&self, b: usize, alpha: f64, loss_b: f64) -> Result<f64> {
        let v = self.buckets.trace.vocab_size();
        let n = self.buckets.trace.len() as u64;
        let mut loss = 0.0;
        let mut sum_sq = 0.0;
        for (i, members) in self.buckets.members.iter().enumerate() {
            let (a, l) = if i == b {
                (alpha, loss_b)
            } else {
                (self.alphas[i], self.loss_sums[i])
            };
            let w = interval_width(a, v)?;
            loss += l;
            sum_sq += members.len() as f64 * w * w;
        }
        let ctx =
            BoundContext::from_sum_of_squares(self.delta, self.c_bits, self.buckets.trace.total_tokens(), n, sum_sq)?;
        let r = assemble(
            Metric::Bpd,
            loss / n as f64,
            &ctx,
            bpd_vacuity_threshold(v),
            Assembly::Subsampled,
        )?;
        Ok(r.bound)
    }

    fn value_at(&self, b: usize, alpha: f64) -> Result<f64> {
        self.value_with(b, alpha, self.buckets.loss_sum(b, alpha))
    }

    fn current(&self) -> Result<f64> {
        self.value_with(0, self.alphas[0], self.loss_sums[0])
    }
}

const MAX_SWEEPS: usize = 50;
const GOLDEN_ITERS: usize = 60;

/// Per-bucket smoothing rates minimizing the full bound, by coordinate
/// descent started from the global grid optimum.
///
/// The returned bound is never worse than the global grid search bound.
pub fn optimize_per_token_alpha(trace: &RiskTrace, c_bits: f64, delta: f64, n_buckets: usize) -> Result<AlphaFit> {
    if n_buckets == 0 {
        return Err(Error::invalid("need at least one bucket"));
    }
    let (alpha0, grid_result) = grid_search_global_alpha(trace, c_bits, delta)?;
    let edges = quantile_bucket_edges(trace, n_buckets);
    let mut members = vec![Vec::new(); edges.len() - 1];
    for r in &trace.records {
        members[SmoothingPlan::bucket_of(&edges, r.p_true)].push(r.p_true);
    }
    let buckets = Buckets { members, trace };
    let loss_sums = (0..buckets.members.len())
        .map(|b| buckets.loss_sum(b, alpha0))
        .collect();
    let mut obj = Objective {
        alphas: vec![alpha0; buckets.members.len()],
        buckets,
        c_bits,
        delta,
        loss_sums,
    };

    let grid = alpha_grid();
    let mut value = obj.current()?;
    let mut history = vec![value];
    for _ in 0..MAX_SWEEPS {
        let mut improved = false;
        for b in 0..obj.alphas.len() {
            if obj.buckets.members[b].is_empty() {
                continue;
            }
            let (alpha, candidate) = line_search(&obj, b, &grid)?;
            if candidate < value - 1e-13 * value.abs().max(1.0) {
                obj.alphas[b] = alpha;
                obj.loss_sums[b] = obj.buckets.loss_sum(b, alpha);
                value = obj.current()?;
                history.push(value);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }

    let plan = SmoothingPlan::per_token(edges.clone(), obj.alphas.clone())?;
    let mut result = evaluate_bpd_bound(trace, &plan, c_bits, delta)?;
    let plan = if result.bound <= grid_result.bound {
        plan
    } else {
        // summation order differs from the grid evaluation; fall back to it
        result = grid_result;
        SmoothingPlan::per_token(edges.clone(), vec![alpha0; edges.len() - 1])?
    };
    Ok(AlphaFit {
        plan,
        result,
        initial_alpha: alpha0,
        objective_history: history,
    })
}

/// Best rate for one bucket: grid scan, then golden-section refinement in
/// `log α` around the best grid point.
fn line_search(obj: &Objective<'_>, b: usize, grid: &[f64]) -> Result<(f64, f64)> {
    let mut best = (obj.alphas[b], obj.value_at(b, obj.alphas[b])?);
    let mut best_idx = None;
    for (i, &a) in grid.iter().enumerate() {
        let v = obj.value_at(b, a)?;
        if v < best.1 {
            best = (a, v);
            best_idx = Some(i);
        }
    }
    let (lo, hi) = match best_idx {
        Some(i) => (grid[i.saturating_sub(1)], grid[(i + 1).min(grid.len() - 1)]),
        None => {
            let a = obj.alphas[b];
            ((a / 1.6).max(ALPHA_GRID_MIN), (a * 1.6).min(1.0))
        }
    };
    let (mut x0, mut x1) = (lo.ln(), hi.ln());
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = x1 - ratio * (x1 - x0);
    let mut d = x0 + ratio * (x1 - x0);
    let mut fc = obj.value_at(b, c.exp().min(1.0))?;
    let mut fd = obj.value_at(b, d.exp().min(1.0))?;
    for _ in 0..GOLDEN_ITERS {
        if fc < fd {
            x1 = d;
            d = c;
            fd = fc;
            c = x1 - ratio * (x1 - x0);
            fc = obj.value_at(b, c.exp().min(1.0))?;
        } else {
            x0 = c;
            c = d;
            fc = fd;
            d = x0 + ratio * (x1 - x0);
            fd = obj.value_at(b, d.exp().min(1.0))?;
        }
    }
    for (x, f) in [(c, fc), (d, fd)] {
        if f < best.1 {
            best = (x.exp().min(1.0), f);
        }
    }
    Ok(best)
}
