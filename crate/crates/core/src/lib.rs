//! Weighted QPSK mutual-information power allocation for parallel AWGN
//! channels, steered by a guarded language-model loop.
//!
//! The fast loop ([`optimizer`]) runs projected gradient ascent on the
//! weighted sum of per-channel MI estimates ([`mi`]). The slow loop
//! ([`navigator`]) turns an operator policy and a state summary into new
//! weights and budget through a chat backend ([`llm`]), sanitizing,
//! clamping and smoothing every proposal before it is written.

pub mod baselines;
pub mod control;
pub mod error;
pub mod llm;
pub mod mi;
pub mod model;
pub mod navigator;
pub mod optimizer;
pub mod scenarios;
pub mod telemetry;

pub use error::{Error, Result};
