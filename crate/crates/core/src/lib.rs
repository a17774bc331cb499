//! Token-level generalization bounds for autoregressive sequence models.
//!
//! The crate is organized around the [`RiskTrace`]: any model that can
//! report, for a sample of positions, the probability and rank it gave the
//! realized token can be certified with [`evaluate_bpd_bound`] and
//! [`evaluate_topk_bound`]. The remaining modules supply the complexity term
//! (quantization, arithmetic coding, DEFLATE sizing), smoothing optimization,
//! and desk-scale models to exercise the pipeline end to end.

pub mod bound;
pub mod coder;
pub mod corpus;
pub mod error;
pub mod format;
pub mod markov;
pub mod numeric;
pub mod sequences;
pub mod smoothing;
pub mod structured;
pub mod trace;

pub use bound::{
    evaluate_bpd_bound, evaluate_bpd_bound_full_sequence, evaluate_topk_bound, Assembly, BoundContext, BoundResult,
    Metric,
};
pub use coder::{CompressedArtifact, HeaderField, Scheme};
pub use corpus::TokenStream;
pub use error::{Error, Result};
pub use format::{read_trace, write_trace, TraceFormat};
pub use markov::SparseMarkov;
pub use smoothing::SmoothingPlan;
pub use structured::{Parametrization, StructuredLinear, SubspaceExpansion};
pub use trace::{RiskRecord, RiskTrace, TraceHeader};
