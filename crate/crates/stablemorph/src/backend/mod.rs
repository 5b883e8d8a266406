//! Pluggable generation, recognition, quality and feature backends.
//!
//! The workbench never runs a diffusion model or a recognition network
//! itself; it talks to implementations of these traits, looked up by name
//! in a [`Registry`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use stablemorph_core::{GenerationRequest, WeightArray};

use crate::error::{BackendError, Error, Result};

pub mod external;
pub mod stub;

pub trait RecognitionBackend: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str {
        "1"
    }
    fn embedding_dim(&self) -> usize;
    fn embed(&self, image: &Path) -> Result<Vec<f64>, BackendError>;
}

/// Low-rank fine-tuning settings handed to the generation backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    pub rank: u32,
    pub steps: u32,
    pub learning_rate: f64,
    pub seed: u64,
    /// Images per subject used for fine-tuning (`m`).
    pub images_per_subject: usize,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            steps: 500,
            learning_rate: 1e-4,
            seed: 0,
            images_per_subject: 1,
        }
    }
}

pub struct FineTuneJob<'a> {
    pub subject_id: &'a str,
    pub image_ids: &'a [String],
    pub images: &'a [PathBuf],
    pub config: &'a FineTuneConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedImage {
    pub width: u32,
    pub height: u32,
    /// Packed RGB8, row-major.
    pub rgb: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub fine_tune: bool,
    pub generate: bool,
}

pub trait GenerationBackend: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str {
        "1"
    }
    fn capabilities(&self) -> Capabilities;
    /// Trains a subject adapter; returns layer-path keyed weights.
    fn fine_tune(&self, job: &FineTuneJob<'_>) -> Result<BTreeMap<String, WeightArray>, BackendError>;
    fn generate(&self, request: &GenerationRequest, seed: u64) -> Result<GeneratedImage, BackendError>;
}

pub trait QualityScorer: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str {
        "1"
    }
    fn score(&self, image: &Path) -> Result<f64, BackendError>;
}

/// Image feature extractor feeding the Fréchet distance.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str {
        "1"
    }
    fn features(&self, image: &Path) -> Result<Vec<f64>, BackendError>;
}

#[derive(Clone, Default)]
pub struct Registry {
    recognition: BTreeMap<String, Arc<dyn RecognitionBackend>>,
    generation: BTreeMap<String, Arc<dyn GenerationBackend>>,
    scorers: BTreeMap<String, Arc<dyn QualityScorer>>,
    features: BTreeMap<String, Arc<dyn FeatureExtractor>>,
}

fn lookup<T: ?Sized>(map: &BTreeMap<String, Arc<T>>, kind: &'static str, name: &str) -> Result<Arc<T>> {
    map.get(name).cloned().ok_or_else(|| Error::UnknownBackend {
        kind,
        name: name.to_string(),
    })
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry with the built-in deterministic backends.
    pub fn builtin() -> Self {
        let mut r = Self::default();
        r.register_recognition(Arc::new(stub::StubRecognition::default()));
        r.register_generation(Arc::new(stub::StubGenerator::default()));
        r.register_scorer(Arc::new(stub::StubScorer::new("stub")));
        r.register_scorer(Arc::new(stub::LaplacianSharpness));
        r.register_features(Arc::new(stub::ColorHistogram::default()));
        r
    }

    pub fn register_recognition(&mut self, b: Arc<dyn RecognitionBackend>) {
        self.recognition.insert(b.name().to_string(), b);
    }

    pub fn register_generation(&mut self, b: Arc<dyn GenerationBackend>) {
        self.generation.insert(b.name().to_string(), b);
    }

    pub fn register_scorer(&mut self, b: Arc<dyn QualityScorer>) {
        self.scorers.insert(b.name().to_string(), b);
    }

    pub fn register_features(&mut self, b: Arc<dyn FeatureExtractor>) {
        self.features.insert(b.name().to_string(), b);
    }

    pub fn recognition(&self, name: &str) -> Result<Arc<dyn RecognitionBackend>> {
        lookup(&self.recognition, "recognition", name)
    }

    pub fn generation(&self, name: &str) -> Result<Arc<dyn GenerationBackend>> {
        lookup(&self.generation, "generation", name)
    }

    pub fn scorer(&self, name: &str) -> Result<Arc<dyn QualityScorer>> {
        lookup(&self.scorers, "quality", name)
    }

    pub fn features(&self, name: &str) -> Result<Arc<dyn FeatureExtractor>> {
        lookup(&self.features, "feature", name)
    }
}

pub(crate) fn backend_error(backend: &str, message: impl Into<String>) -> Error {
    Error::Backend {
        backend: backend.to_string(),
        message: message.into(),
    }
}
