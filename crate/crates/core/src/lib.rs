//! Hyperbolic backward-compatible representation learning at desk scale.
//!
//! Embeddings from a Euclidean encoder are lifted onto the Lorentz
//! hyperboloid. A new encoder is trained to stay compatible with a frozen old
//! one through an entailment-cone loss and an uncertainty-weighted robust
//! contrastive loss. The crate also provides the retrieval metrics used to
//! measure compatibility and a synthetic scenario harness.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod manifold;
pub mod par;
pub mod persist;
pub mod report;
pub mod scenarios;

pub use error::{HbctError, Result};
