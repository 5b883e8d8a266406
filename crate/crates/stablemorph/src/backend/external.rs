//! Backends implemented by external programs.
//!
//! Each plugin is a command line; the workbench appends a verb and
//! arguments and reads the answer from stdout or an output file:
//!
//! | kind        | invocation                                   | answer                         |
//! |-------------|----------------------------------------------|--------------------------------|
//! | recognition | `cmd… embed <image>`                         | whitespace-separated floats    |
//! | scorer      | `cmd… score <image>`                         | one float                      |
//! | features    | `cmd… features <image>`                      | whitespace-separated floats    |
//! | generation  | `cmd… fine-tune <job.json> <archive-dir>`    | adapter archive in the dir     |
//! | generation  | `cmd… generate <request-dir> <seed> <png>`   | PNG at the given path          |
//!
//! A generation request directory holds `request.json`, plus `adapters/`
//! (adapter archive) and `identity.smid` when those channels are present.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};
use stablemorph_core::{GenerationRequest, WeightArray};

use super::{
    Capabilities, FeatureExtractor, FineTuneJob, GeneratedImage, GenerationBackend, QualityScorer, RecognitionBackend,
};
use crate::archive::{read_archive, write_archive};
use crate::error::BackendError;
use crate::identity_cache::encode_identity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PluginKind {
    Recognition,
    Generation,
    Scorer,
    Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PluginSpec {
    pub kind: PluginKind,
    pub name: String,
    #[serde(default = "default_version")]
    pub version: String,
    pub command: Vec<String>,
    /// Required for recognition plugins.
    #[serde(default)]
    pub embedding_dim: Option<usize>,
}

fn default_version() -> String {
    "1".into()
}

#[derive(Debug, Clone)]
pub struct CommandPlugin {
    spec: PluginSpec,
}

impl CommandPlugin {
    pub fn new(spec: PluginSpec) -> Result<Self, String> {
        if spec.command.is_empty() {
            return Err(format!("plugin {}: empty command", spec.name));
        }
        if spec.kind == PluginKind::Recognition && spec.embedding_dim.is_none() {
            return Err(format!("recognition plugin {}: embedding_dim is required", spec.name));
        }
        Ok(Self { spec })
    }

    pub fn kind(&self) -> PluginKind {
        self.spec.kind
    }

    fn run(&self, args: &[&std::ffi::OsStr]) -> Result<String, BackendError> {
        let output = Command::new(&self.spec.command[0])
            .args(&self.spec.command[1..])
            .args(args)
            .output()
            .map_err(|e| BackendError::new(format!("cannot run {}: {e}", self.spec.command[0])))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(BackendError::new(format!(
                "{} exited with {}: {}",
                self.spec.name,
                output.status,
                stderr.trim()
            )));
        }
        String::from_utf8(output.stdout).map_err(|_| BackendError::new("plugin output is not UTF-8"))
    }

    fn floats(&self, verb: &str, image: &Path) -> Result<Vec<f64>, BackendError> {
        let out = self.run(&[verb.as_ref(), image.as_os_str()])?;
        out.split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| BackendError::new(format!("plugin printed non-numeric token {t:?}")))
            })
            .collect()
    }
}

impl RecognitionBackend for CommandPlugin {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn version(&self) -> &str {
        &self.spec.version
    }

    fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim.unwrap_or(0)
    }

    fn embed(&self, image: &Path) -> Result<Vec<f64>, BackendError> {
        self.floats("embed", image)
    }
}

impl QualityScorer for CommandPlugin {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn version(&self) -> &str {
        &self.spec.version
    }

    fn score(&self, image: &Path) -> Result<f64, BackendError> {
        match self.floats("score", image)?.as_slice() {
            [v] => Ok(*v),
            other => Err(BackendError::new(format!("expected one score, got {}", other.len()))),
        }
    }
}

impl FeatureExtractor for CommandPlugin {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn version(&self) -> &str {
        &self.spec.version
    }

    fn features(&self, image: &Path) -> Result<Vec<f64>, BackendError> {
        self.floats("features", image)
    }
}

#[derive(Serialize)]
struct JobFile<'a> {
    subject_id: &'a str,
    image_ids: &'a [String],
    images: Vec<String>,
    config: &'a super::FineTuneConfig,
}

#[derive(Serialize)]
struct RequestFile<'a> {
    pair_id: &'a str,
    prompt: &'a str,
    negative_prompt: &'a str,
    seed: u64,
    steps: u32,
    outputs: u32,
    has_adapters: bool,
    has_identity: bool,
}

fn io_err(e: impl std::fmt::Display) -> BackendError {
    BackendError::new(e.to_string())
}

impl GenerationBackend for CommandPlugin {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn version(&self) -> &str {
        &self.spec.version
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            fine_tune: true,
            generate: true,
        }
    }

    fn fine_tune(&self, job: &FineTuneJob<'_>) -> Result<BTreeMap<String, WeightArray>, BackendError> {
        let work = tempfile::tempdir().map_err(io_err)?;
        let job_path = work.path().join("job.json");
        let file = JobFile {
            subject_id: job.subject_id,
            image_ids: job.image_ids,
            images: job.images.iter().map(|p| p.to_string_lossy().into_owned()).collect(),
            config: job.config,
        };
        std::fs::write(&job_path, serde_json::to_vec_pretty(&file).map_err(io_err)?).map_err(io_err)?;
        let out = work.path().join("adapter");
        self.run(&["fine-tune".as_ref(), job_path.as_os_str(), out.as_os_str()])?;
        let map = read_archive(&out).map_err(io_err)?;
        Ok(map.entries().clone())
    }

    fn generate(&self, request: &GenerationRequest, seed: u64) -> Result<GeneratedImage, BackendError> {
        let work = tempfile::tempdir().map_err(io_err)?;
        let dir = work.path().join("request");
        std::fs::create_dir(&dir).map_err(io_err)?;
        let file = RequestFile {
            pair_id: &request.pair_id,
            prompt: &request.prompt,
            negative_prompt: &request.negative_prompt,
            seed,
            steps: request.steps,
            outputs: request.outputs,
            has_adapters: request.merged_adapters.is_some(),
            has_identity: request.merged_identity.is_some(),
        };
        std::fs::write(dir.join("request.json"), serde_json::to_vec_pretty(&file).map_err(io_err)?)
            .map_err(io_err)?;
        if let Some(w) = &request.merged_adapters {
            write_archive(&dir.join("adapters"), w).map_err(io_err)?;
        }
        if let Some(e) = &request.merged_identity {
            std::fs::write(dir.join("identity.smid"), encode_identity(e, "merged")).map_err(io_err)?;
        }
        let png = work.path().join("out.png");
        let seed_arg = seed.to_string();
        self.run(&["generate".as_ref(), dir.as_os_str(), seed_arg.as_ref(), png.as_os_str()])?;
        let img = image::open(&png).map_err(io_err)?.to_rgb8();
        Ok(GeneratedImage {
            width: img.width(),
            height: img.height(),
            rgb: img.into_raw(),
        })
    }
}
