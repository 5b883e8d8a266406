//! Numerical core for face-morph generation and evaluation.
//!
//! Everything in this crate is pure computation over in-memory values and
//! only needs `alloc`: morph-pair selection by embedding similarity,
//! spherical interpolation of identity embeddings, affine merging of
//! low-rank adapter weights, request assembly for the ablation variants,
//! and the evaluation metrics (FMR-calibrated thresholds, Morphing Attack
//! Potential matrices, Fréchet distance, quality aggregation).
//!
//! File formats, caches, backends and the command line live in the
//! `stablemorph` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod ablation;
pub mod adapter;
pub mod error;
pub mod identity;
mod linalg;
pub mod metrics;
pub mod pairing;
pub mod slerp;

pub use ablation::{DEFAULT_PROMPT, AblationConfig, GenerationRequest, RequestParams, Variant};
pub use adapter::{merge_adapters, AdapterWeightMap, Provenance, WeightArray, WeightData};
pub use error::{Error, Result};
pub use identity::{merge_identities, representative_embedding, IdentityMatrix};
pub use pairing::{pair_id, select_pairs, Gender, MorphPair, PairSelection, SelectionParams, SubjectRecord};
pub use slerp::{slerp, PARALLEL_EPSILON};
