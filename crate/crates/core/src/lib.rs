//! Deterministic, backend-pluggable simulation of how psychologically
//! parameterized agent communities absorb and recover from a credible false
//! claim.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`community`]: trait sampling, description bands, persona instantiation.
//! - [`calibration`]: questionnaire administration, scoring, template search.
//! - [`network`]: the fixed small-world interaction graph.
//! - [`claims`]: claim pool, credibility scoring, exposure scheduling.
//! - [`backend`]: the agent backend interface plus the deterministic
//!   reference model and the remote chat-completion client.
//! - [`engine`]: the round-synchronous simulation loop and run logs.
//! - [`interventions`]: context-signal generators for the four treatment arms.
//! - [`metrics`]: robustness, recovery, stance mechanisms, resilience maps.
//! - [`config`] and [`pipeline`]: run configuration, sweeps, persistence.
//! - [`testkit`]: a biased questionnaire responder and an HTTP stub server.

pub mod backend;
pub mod calibration;
pub mod claims;
pub mod community;
pub mod config;
pub mod engine;
pub mod error;
pub mod interventions;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod reference_data;
pub mod seed;
pub mod testkit;

pub use error::{BackendError, Error, Result};

/// Version string written into every output header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
