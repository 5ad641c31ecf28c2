//! Selection of long-context pretraining data by first-layer attention
//! statistics.
//!
//! The pipeline cuts tokenized documents into fixed-length windows
//! ([`chunker`]), stores them in a binary chunk store ([`corpus`]), measures
//! how much attention each token pays to context at least `k` positions back
//! ([`attn`], [`depscore`]), and keeps the best-scoring chunks of every source
//! category under a token budget ([`selector`]).

pub mod attn;
pub mod chunker;
pub mod corpus;
pub mod depscore;
pub mod error;
pub mod fingerprint;
pub mod records;
pub mod selector;

pub use error::{Error, Result};
