//! Mixture-of-distributions language models.
//!
//! A language model here is `P(w | c) = sum_k λ_k(c) P_k(w | c)`: a
//! context-dependent mixture over a set of distributions. Count-based
//! n-gram columns, a learned or heuristic weighting network, and the
//! implicit identity block of a neural LM all fit this one form.

pub mod corpus;
pub mod counts;
pub mod error;
pub mod eval;
pub mod mixture;
pub mod models;
pub mod neural;
pub mod scalar;
pub mod smoothing;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by the concrete aliases below.
pub type Real = f64;
pub type Model = models::Model<Real>;
pub type MixtureWeights = mixture::MixtureWeights<Real>;
pub type SparseDistribution = smoothing::SparseDistribution<Real>;
pub type Tensor = neural::Tensor<Real>;
pub type LambdaNet = neural::LambdaNet<Real>;
