//! Deterministic federated distillation simulator with logits-poisoning attacks.
//!
//! Clients train small MLPs on non-i.i.d. shards, exchange raw logits through
//! an aggregation server and distill from the returned global knowledge.
//! Malicious clients rewrite their uploads with one of several attacks
//! (random, zero, FDLA, PCFDLA) and the crate measures how much honest
//! clients suffer.

pub mod attacks;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod knowledge;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sim;

pub use error::{FdError, Result};
pub use exec::Execution;
pub use sim::{run_experiment, ExperimentConfig, ExperimentOutcome, RunOptions};
