//! Heterophily-guided environment inference (HEI) for invariant node
//! classification, with ERM, V-REx and EERM-lite baselines.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: CSR graph, file ingestion, node homophily and the
//!   homophily-stratified evaluation settings.
//! - [`similarity`]: Local Sim, Agg Sim and SimRank neighbor-pattern
//!   estimators.
//! - [`synthgen`]: synthetic graphs with a controlled train/test homophily
//!   shift and an invariant/spurious feature split.
//! - [`nn`]: a small dense reverse-mode autodiff tape with Adam.
//! - [`backbones`]: LINKX-lite and SGC-lite encoders plus linear heads.
//! - [`trainers`]: ERM, V-REx, EERM-lite and HEI training loops.
//! - [`harness`]: multi-trial experiments, sweeps and result tables.

pub mod backbones;
pub mod error;
pub mod graph;
pub mod harness;
pub mod nn;
pub mod similarity;
pub mod stats;
pub mod synthgen;
pub mod trainers;

pub use error::{Error, Result};

/// Version string embedded in every result file.
pub const TOOL_VERSION: &str = concat!("hei ", env!("CARGO_PKG_VERSION"));
