//! Structured parametrizations of linear maps, the Kronecker subspace
//! expansion, gradient checks, and a toy model that exercises the
//! train → quantize → code → certify loop.

pub mod gradcheck;
pub mod layer;
pub mod subspace;
pub mod toy;

pub use gradcheck::{fd_check, fd_gradient_check, ProbeLoss};
pub use layer::{LayerKind, Parametrization, StructuredLinear};
pub use subspace::{subspace_expand, SubspaceExpansion};
pub use toy::{train_full_precision, train_toy_model, FeatureMap, Features, ToyConfig, ToyModel, ToyRun};
