//! Deterministic discrete-event simulation of federated UTM strategic
//! deconfliction.
//!
//! A set of USS nodes coordinate flight plans through a shared DSS
//! registry using optimistic concurrency: each commit must present the
//! version keys of everything currently relevant to it, and commits on a
//! stale picture are rejected with the current one attached. Network
//! links between components carry latency, jitter, and loss, so the
//! interesting behavior (commit races, churn-induced rejection storms,
//! contingency deadlines) emerges from timing alone.
//!
//! Everything is reproducible: one `u64` seed fixes every latency draw,
//! loss draw, and version number, and two runs of the same script under
//! the same seed produce identical reports.
//!
//! This crate holds the simulation itself and has no IO; it is
//! `no_std + alloc`. The `utmsim` binary crate layers file formats and a
//! command line on top.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod audit;
pub mod dss;
pub mod engine;
pub mod geom4d;
pub mod metrics;
pub mod netlink;
#[cfg(any(test, feature = "oracles"))]
pub mod oracle;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sweep;
pub mod uss;

pub use engine::{run, Params, ScenarioScript, ScriptError};
pub use report::SimReport;
