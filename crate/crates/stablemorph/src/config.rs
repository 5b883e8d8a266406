//! Run configuration: TOML file, defaults and command-line overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use stablemorph_core::metrics::MapSemantics;
use stablemorph_core::{RequestParams, SelectionParams, Variant, DEFAULT_PROMPT};

use crate::backend::external::{CommandPlugin, PluginKind, PluginSpec};
use crate::backend::{FineTuneConfig, Registry};
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, sha256_hex};
use crate::pipeline::RunSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendNames {
    pub generation: String,
    pub recognition: String,
    pub scorers: Vec<String>,
    pub features: String,
}

impl Default for BackendNames {
    fn default() -> Self {
        Self {
            generation: "stub".into(),
            recognition: "stub".into(),
            scorers: vec!["stub".into()],
            features: "color-histogram".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub variant: String,
    pub prompt: String,
    pub negative_prompt: String,
    pub steps: u32,
    pub outputs: u32,
    pub identity_lambda: f64,
    pub adapter_alpha: f64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        let p = RequestParams::default();
        Self {
            variant: Variant::Default.as_str().into(),
            prompt: DEFAULT_PROMPT.into(),
            negative_prompt: p.negative_prompt,
            steps: p.steps,
            outputs: p.outputs,
            identity_lambda: p.identity_lambda,
            adapter_alpha: p.adapter_alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingSettings {
    pub top_k: usize,
    pub max_pairs: Option<usize>,
}

impl Default for PairingSettings {
    fn default() -> Self {
        let p = SelectionParams::default();
        Self {
            top_k: p.top_k,
            max_pairs: p.max_pairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub target_fmr: f64,
    pub map_semantics: String,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            target_fmr: 0.001,
            map_semantics: MapSemantics::default().as_str().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<String>,
    pub dataset_root: Option<PathBuf>,
    /// Layout descriptor used by `ingest`.
    pub layout: Option<PathBuf>,
    pub out: PathBuf,
    pub cache: PathBuf,
    pub seed: u64,
    pub max_jobs: usize,
    pub backends: BackendNames,
    pub generation: GenerationSettings,
    pub finetune: FineTuneConfig,
    pub pairing: PairingSettings,
    pub evaluation: EvaluationSettings,
    pub plugins: Vec<PluginSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            dataset_root: None,
            layout: None,
            out: PathBuf::from("out"),
            cache: PathBuf::from("cache"),
            seed: 0,
            max_jobs: 1,
            backends: BackendNames::default(),
            generation: GenerationSettings::default(),
            finetune: FineTuneConfig::default(),
            pairing: PairingSettings::default(),
            evaluation: EvaluationSettings::default(),
            plugins: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks cross-field constraints.
    pub fn validate(&self) -> Result<()> {
        self.variant()?;
        self.map_semantics()?;
        let g = &self.generation;
        if g.outputs == 0 {
            return Err(Error::Config("generation.outputs must be at least 1".into()));
        }
        if g.steps == 0 {
            return Err(Error::Config("generation.steps must be at least 1".into()));
        }
        for (name, v) in [("identity_lambda", g.identity_lambda), ("adapter_alpha", g.adapter_alpha)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("generation.{name} must lie in [0, 1], got {v}")));
            }
        }
        let fmr = self.evaluation.target_fmr;
        if !(fmr > 0.0 && fmr < 1.0) {
            return Err(Error::Config(format!("evaluation.target_fmr must lie in (0, 1), got {fmr}")));
        }
        if self.pairing.top_k == 0 {
            return Err(Error::Config("pairing.top_k must be at least 1".into()));
        }
        if self.finetune.images_per_subject == 0 {
            return Err(Error::Config("finetune.images_per_subject must be at least 1".into()));
        }
        if self.max_jobs == 0 {
            return Err(Error::Config("max_jobs must be at least 1".into()));
        }
        if self.backends.scorers.is_empty() {
            return Err(Error::Config("backends.scorers is empty".into()));
        }
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant> {
        self.generation
            .variant
            .parse()
            .map_err(|_| Error::Config(format!("unknown variant {:?}", self.generation.variant)))
    }

    pub fn map_semantics(&self) -> Result<MapSemantics> {
        self.evaluation
            .map_semantics
            .parse()
            .map_err(|_| Error::Config(format!("unknown MAP semantics {:?}", self.evaluation.map_semantics)))
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        // serde_json::Value objects are sorted maps, so the text is canonical.
        let value = serde_json::to_value(self).expect("config serializes");
        sha256_hex(value.to_string().as_bytes())
    }

    pub fn selection_params(&self) -> SelectionParams {
        SelectionParams {
            top_k: self.pairing.top_k,
            max_pairs: self.pairing.max_pairs,
        }
    }

    pub fn run_settings(&self) -> RunSettings {
        let g = &self.generation;
        RunSettings {
            params: RequestParams {
                prompt: g.prompt.clone(),
                negative_prompt: g.negative_prompt.clone(),
                seed: self.seed,
                steps: g.steps,
                outputs: g.outputs,
                identity_lambda: g.identity_lambda,
                adapter_alpha: g.adapter_alpha,
            },
            finetune: self.finetune.clone(),
            max_jobs: self.max_jobs,
            config_hash: self.hash(),
        }
    }

    /// Built-in backends plus the configured external plugins.
    pub fn registry(&self, base: &Registry) -> Result<Registry> {
        let mut r = base.clone();
        for spec in &self.plugins {
            let kind = spec.kind;
            let plugin = Arc::new(CommandPlugin::new(spec.clone()).map_err(Error::Config)?);
            match kind {
                PluginKind::Generation => r.register_generation(plugin),
                PluginKind::Recognition => r.register_recognition(plugin),
                PluginKind::Scorer => r.register_scorer(plugin),
                PluginKind::Features => r.register_features(plugin),
            }
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sed = 1").is_err());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::parse("seed = 7\n[generation]\noutputs = 3\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.generation.outputs, 3);
        assert_eq!(c.generation.steps, 50);
    }

    #[test]
    fn hash_tracks_effective_values() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
