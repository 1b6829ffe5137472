//! Attention-based graph neural network with penalized aggregation.
//!
//! The library trains a multi-head attention GNN whose aggregation learns to
//! down-weight adversarial edges. Supervision comes from clean graphs that
//! are deliberately attacked; a meta-optimization loop (inner adaptation per
//! graph, second-order outer update) distills the penalizing behavior into an
//! initialization that is then fine-tuned on a poisoned target graph.
//!
//! Modules:
//! - [`autodiff`]: reverse-mode tape with differentiable gradients (needed
//!   for the exact second-order meta update).
//! - [`graph`]: graph type, file I/O, synthetic generation, and splits.
//! - [`model`]: the attention GNN itself.
//! - [`losses`]: classification loss, attention-penalty loss, combined
//!   objective.
//! - [`attacks`]: poisoning attack generators (random, gradient-guided,
//!   targeted).
//! - [`meta`]: inner/outer meta-optimization, fine-tuning, ablation regimes.
//! - [`eval`]: accuracy, attention statistics, histograms, edge filtering.

pub mod attacks;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod meta;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
