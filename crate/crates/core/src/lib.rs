//! Mixture-of-inputs decoding.
//!
//! After each sampled token, the next model input is a convex combination of
//! token embeddings whose weights are the posterior mean of a Dirichlet prior
//! (concentration `H · p`, with `H` the normalized entropy of the output
//! distribution `p`) updated by one pseudo-count of weight `β + 1 − H` on the
//! sampled token:
//!
//! ```text
//! w_i = (H p_i + (β + 1 − H) [i = y]) / (β + 1),     h = Σ_i w_i e_i
//! ```
//!
//! The crate contains the weight math ([`mix`]), the nucleus sampler
//! ([`sampler`]), embedding mixing ([`embedding`]), a tiny transformer that
//! accepts continuous inputs ([`model`]), the closed decoding loop with
//! trace/replay ([`pipeline`]), hyperparameter analysis tooling
//! ([`experiments`]) and prompt blending ([`blend`]).

pub mod blend;
pub mod embedding;
pub mod error;
pub mod experiments;
pub mod mix;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod sampler;

pub use error::{MoiError, Result};
pub use par::Execution;
