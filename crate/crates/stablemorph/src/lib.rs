//! Face-morph generation and evaluation workbench.
//!
//! This crate carries everything that touches the file system or a backend:
//! dataset manifests, identity and adapter caches, the adapter archive
//! format, the batch generation pipeline, score files and reports, plots
//! and the `stablemorph` command line. The numerical work is done by
//! [`stablemorph_core`].

pub mod archive;
pub mod backend;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod fingerprint;
pub mod fsutil;
pub mod identity_cache;
pub mod pipeline;
pub mod plots;

pub use error::{BackendError, Error, Result};
pub use stablemorph_core as core;
