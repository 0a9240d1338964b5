//! Counterfactual detoxification engine.
//!
//! The pipeline targets toxic tokens with a local feature importance method,
//! replaces them through a beam search over masked-infilling candidates until
//! the steering classifier flips, then optionally refines the edit set with
//! counterfactual feature importance. Everything here is model-agnostic: models
//! are reached through the [`backend::BackendSuite`] trait, and the crate ships
//! deterministic toy backends for offline use.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is off.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attribution;
pub mod backend;
pub mod error;
pub mod eval;
pub mod hash;
mod linalg;
pub mod search;
pub mod text;

pub use attribution::{ImportanceVector, Method};
pub use backend::{BackendSuite, BaselineSpec, Capabilities, InfillCandidate, ToxicityScore};
pub use error::{BackendError, BackendErrorKind, Capability, Error, Result};
pub use eval::{EvalItem, EvaluationReport, ItemMetrics, ItemRecord};
pub use search::{CounterfactualResult, SearchConfig};
pub use text::{Edit, EditSet, TokenText};
