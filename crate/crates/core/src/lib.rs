//! Deterministic simulator and decision library for edge-cloud LLM serving
//! under prompt attacks.
//!
//! The library models a fleet of edge servers that front a cloud-hosted LLM.
//! Each edge server runs a lightweight prompt-safety detector and a labeled
//! vector store. Benign and malicious users pick edge servers each stage;
//! each edge's defender decides which queued prompts to detect, trading the
//! detection latency and compute against the LLM resources a malicious prompt
//! would burn.
//!
//! Main pieces:
//!
//! - [`cost`] — closed-form inference cost and latency arithmetic, plus the
//!   global latency/resource objective.
//! - [`workload`] — dataset loading, token counting, and per-stage task
//!   generation.
//! - [`vdb`] — in-memory labeled vector store with deterministic
//!   feature-hashing embeddings.
//! - [`detector`] — calibrated simulated detector, remote-detector client,
//!   and F1 accounting.
//! - [`belief`] — per-player Bayesian belief updates from observed responses,
//!   latencies, and vector similarity.
//! - [`defender`] — per-prompt cost coefficients, the exact detection
//!   allocation solver, marginal-analysis budget prediction, and a genetic
//!   baseline.
//! - [`game`] — type assignment, utility functions, softmin strategies, and
//!   equilibrium diagnostics.
//! - [`sim`] — the multi-stage game loop, simulated LLM, metrics, and
//!   strategy comparison harness.
//! - [`oracle`] — brute-force self-checks kept independent of the solver
//!   implementations they verify.
//!
//! Every stochastic choice is driven by seeds derived from the run's master
//! seed, so identical configurations replay bit-identically and strategies
//! can be compared under common random numbers.

pub mod belief;
pub mod cost;
pub mod defender;
pub mod detector;
pub mod error;
pub mod game;
pub mod oracle;
pub mod rng;
pub mod sim;
pub mod vdb;
pub mod workload;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
