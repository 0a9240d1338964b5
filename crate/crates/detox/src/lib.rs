//! File formats, HTTP backend and pipeline orchestration around `detox-core`.

pub mod backends;
pub mod baseline;
pub mod config;
pub mod corpus;
pub mod error;
pub mod http;
pub mod pipeline;

pub use error::{DetoxError, Result};
