//! Request assembly, morph generation and resumable batch runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use stablemorph_core::{AblationConfig, GenerationRequest, MorphPair, RequestParams, Variant};

use crate::archive::{fine_tune, AdapterCache};
use crate::backend::{backend_error, FineTuneConfig, GeneratedImage, GenerationBackend, RecognitionBackend};
use crate::corpus::Manifest;
use crate::error::{Error, Result};
use crate::fingerprint::{artifact_fingerprint, request_fingerprint};
use crate::fsutil::write_atomic;
use crate::identity_cache::{extract_identity, IdentityCache};

/// Runs `f` over `items` on up to `jobs` threads; results keep input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

/// On-disk caches shared by the pipeline stages.
#[derive(Debug, Clone)]
pub struct Stores {
    pub identity: IdentityCache,
    pub adapters: AdapterCache,
}

impl Stores {
    pub fn new(cache_root: &Path) -> Self {
        Self {
            identity: IdentityCache::new(cache_root),
            adapters: AdapterCache::new(cache_root),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub params: RequestParams,
    pub finetune: FineTuneConfig,
    pub max_jobs: usize,
    pub config_hash: String,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            params: RequestParams::default(),
            finetune: FineTuneConfig::default(),
            max_jobs: 1,
            config_hash: String::new(),
        }
    }
}

/// Everything a batch needs besides the pair list.
pub struct Context<'a> {
    pub manifest: &'a Manifest,
    pub stores: &'a Stores,
    pub recognition: &'a dyn RecognitionBackend,
    pub generation: &'a dyn GenerationBackend,
}

/// Fine-tunes (or loads) the adapter for each subject.
pub fn prepare_adapters(ctx: &Context<'_>, subjects: &[String], settings: &RunSettings) -> Vec<(String, Result<bool>)> {
    let m = settings.finetune.images_per_subject;
    let results = parallel_map(subjects, settings.max_jobs, |s| {
        let images = ctx.manifest.subject_images(s, m)?;
        fine_tune(s, &images, &settings.finetune, ctx.generation, &ctx.stores.adapters).map(|(_, cached)| cached)
    });
    subjects.iter().cloned().zip(results).collect()
}

/// Extracts (or loads) the `n`-image identity matrix for each subject.
pub fn prepare_identities(ctx: &Context<'_>, subjects: &[String], n: usize, jobs: usize) -> Vec<(String, Result<bool>)> {
    let results = parallel_map(subjects, jobs, |s| {
        let images = ctx.manifest.subject_images(s, n)?;
        extract_identity(s, &images, ctx.recognition, &ctx.stores.identity).map(|(_, cached)| cached)
    });
    subjects.iter().cloned().zip(results).collect()
}

/// Subjects referenced by a pair list, sorted and deduplicated.
pub fn pair_subjects(pairs: &[MorphPair]) -> Vec<String> {
    let set: BTreeSet<&str> = pairs
        .iter()
        .flat_map(|p| [p.subject_a.as_str(), p.subject_b.as_str()])
        .collect();
    set.into_iter().map(String::from).collect()
}

/// Assembles a request from cached adapters and identities. Nothing is
/// trained or extracted here; a missing cache entry names the subject and
/// stage.
pub fn build_request(
    pair: &MorphPair,
    ablation: &AblationConfig,
    settings: &RunSettings,
    ctx: &Context<'_>,
) -> Result<GenerationRequest> {
    let adapters = if ablation.use_adapters {
        let load = |subject: &str| -> Result<_> {
            let images = ctx.manifest.subject_images(subject, settings.finetune.images_per_subject)?;
            let key = AdapterCache::key(subject, ctx.generation, &settings.finetune, &images);
            ctx.stores.adapters.load(&key)?.ok_or_else(|| Error::MissingArtifact {
                subject: subject.to_string(),
                stage: "fine_tune",
            })
        };
        Some((load(&pair.subject_a)?, load(&pair.subject_b)?))
    } else {
        None
    };
    let identities = if ablation.use_identity {
        let load = |subject: &str| -> Result<_> {
            let images = ctx.manifest.subject_images(subject, ablation.identity_images_n)?;
            let key = IdentityCache::key(subject, ctx.recognition, &images);
            ctx.stores.identity.load(&key)?.ok_or_else(|| Error::MissingArtifact {
                subject: subject.to_string(),
                stage: "identity",
            })
        };
        Some((load(&pair.subject_a)?, load(&pair.subject_b)?))
    } else {
        None
    };
    let request = GenerationRequest::assemble(
        &pair.pair_id,
        ablation,
        &settings.params,
        adapters.as_ref().map(|(a, b)| (a, b)),
        identities.as_ref().map(|(a, b)| (a, b)),
    )?;
    Ok(request)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

/// One line of the append-only run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub pair_id: String,
    pub variant: String,
    pub fingerprint: Option<String>,
    pub request_fingerprint: Option<String>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub backend: String,
    pub config_hash: String,
    pub timestamp_ms: u64,
}

/// A generated morph image registered in the run manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphArtifact {
    pub pair_id: String,
    pub path: PathBuf,
    pub fingerprint: String,
    pub timestamp_ms: u64,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Append-only, line-delimited JSON log of generation outcomes.
///
/// A torn final line (from a killed process) is cut off when the manifest is
/// reopened, so later appends start on a clean line.
pub struct RunManifest {
    path: PathBuf,
    file: Mutex<File>,
    completed: Mutex<BTreeMap<String, RunRecord>>,
}

impl RunManifest {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(p) = path.parent() {
            fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(|e| Error::io(path, e))?;
        if !text.is_empty() && !text.ends_with('\n') {
            let keep = text.rfind('\n').map(|i| i + 1).unwrap_or(0);
            log::warn!("{}: dropping torn trailing record", path.display());
            file.set_len(keep as u64).map_err(|e| Error::io(path, e))?;
            file.seek(SeekFrom::End(0)).map_err(|e| Error::io(path, e))?;
            text.truncate(keep);
        }
        let mut completed = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            match serde_json::from_str::<RunRecord>(line) {
                Ok(r) if r.status == Status::Ok => {
                    if let Some(fp) = &r.fingerprint {
                        completed.insert(fp.clone(), r);
                    }
                }
                Ok(_) => {}
                Err(e) => log::warn!("{} line {}: unreadable record ({e})", path.display(), n + 1),
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
            completed: Mutex::new(completed),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn completed(&self, fingerprint: &str) -> Option<RunRecord> {
        self.completed.lock().expect("manifest index").get(fingerprint).cloned()
    }

    pub fn append(&self, record: &RunRecord) -> Result<()> {
        let mut line = serde_json::to_string(record).expect("run record serializes");
        line.push('\n');
        {
            let mut f = self.file.lock().expect("manifest writer");
            f.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
            f.flush().map_err(|e| Error::io(&self.path, e))?;
        }
        if record.status == Status::Ok {
            if let Some(fp) = &record.fingerprint {
                self.completed
                    .lock()
                    .expect("manifest index")
                    .insert(fp.clone(), record.clone());
            }
        }
        Ok(())
    }

    /// All well-formed records currently on disk.
    pub fn records(&self) -> Result<Vec<RunRecord>> {
        let text = fs::read_to_string(&self.path).map_err(|e| Error::io(&self.path, e))?;
        Ok(text
            .lines()
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect())
    }
}

fn encode_png(img: &GeneratedImage) -> Result<Vec<u8>, String> {
    let expected = img.width as usize * img.height as usize * 3;
    if img.rgb.len() != expected || expected == 0 {
        return Err(format!(
            "image buffer holds {} bytes, expected {expected} for {}x{} RGB",
            img.rgb.len(),
            img.width,
            img.height
        ));
    }
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image_rgb(&img.rgb, img.width, img.height)
        .map_err(|e| e.to_string())?;
    Ok(out)
}

trait WriteRgb {
    fn write_image_rgb(self, buf: &[u8], w: u32, h: u32) -> image::ImageResult<()>;
}

impl<W: Write> WriteRgb for image::codecs::png::PngEncoder<W> {
    fn write_image_rgb(self, buf: &[u8], w: u32, h: u32) -> image::ImageResult<()> {
        use image::ImageEncoder;
        self.write_image(buf, w, h, image::ExtendedColorType::Rgb8)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerateOutcome {
    pub artifacts: Vec<MorphArtifact>,
    pub backend_calls: usize,
    pub reused: usize,
}

/// Generates `request.outputs` images with seeds `seed + i`, reusing any
/// output whose fingerprint is already complete in the run manifest.
pub fn generate(
    request: &GenerationRequest,
    variant: Variant,
    backend: &dyn GenerationBackend,
    out_dir: &Path,
    manifest: &RunManifest,
    config_hash: &str,
) -> Result<GenerateOutcome> {
    if !backend.capabilities().generate {
        return Err(Error::Config(format!("backend {} cannot generate", backend.name())));
    }
    let req_fp = request_fingerprint(request, backend.name(), backend.version());
    let dir = out_dir.join("morphs").join(variant.as_str()).join(&request.pair_id);
    let mut outcome = GenerateOutcome::default();
    for i in 0..request.outputs {
        let seed = request.output_seed(i);
        let fp = artifact_fingerprint(&req_fp, i, seed);
        if let Some(done) = manifest.completed(&fp) {
            if let Some(path) = done.output.filter(|p| p.exists()) {
                outcome.reused += 1;
                outcome.artifacts.push(MorphArtifact {
                    pair_id: request.pair_id.clone(),
                    path,
                    fingerprint: fp,
                    timestamp_ms: done.timestamp_ms,
                });
                continue;
            }
        }
        outcome.backend_calls += 1;
        let img = backend.generate(request, seed).map_err(|e| {
            backend_error(backend.name(), format!("pair {} output {i}: {e}", request.pair_id))
        })?;
        let png = encode_png(&img).map_err(|e| backend_error(backend.name(), e))?;
        let path = dir.join(format!("{}.png", &fp[..16]));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_atomic(&path, &png)?;
        let record = RunRecord {
            pair_id: request.pair_id.clone(),
            variant: variant.as_str().to_string(),
            fingerprint: Some(fp.clone()),
            request_fingerprint: Some(req_fp.clone()),
            output: Some(path.clone()),
            seed: Some(seed),
            status: Status::Ok,
            error: None,
            backend: backend.name().to_string(),
            config_hash: config_hash.to_string(),
            timestamp_ms: now_ms(),
        };
        manifest.append(&record)?;
        outcome.artifacts.push(MorphArtifact {
            pair_id: request.pair_id.clone(),
            path,
            fingerprint: fp,
            timestamp_ms: record.timestamp_ms,
        });
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub pairs: usize,
    /// Pairs that produced at least one new image.
    pub succeeded: usize,
    pub failed: usize,
    /// Pairs served entirely from earlier runs.
    pub skipped: usize,
    pub backend_calls: usize,
    pub artifacts: Vec<MorphArtifact>,
    pub failures: Vec<(String, String)>,
    pub elapsed_secs: f64,
    pub mean_pair_secs: f64,
}

impl std::fmt::Display for RunReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "pairs {} | ok {} | skipped {} | failed {} | images {} | backend calls {} | {:.2}s ({:.3}s/pair)",
            self.pairs,
            self.succeeded,
            self.skipped,
            self.failed,
            self.artifacts.len(),
            self.backend_calls,
            self.elapsed_secs,
            self.mean_pair_secs
        )
    }
}

enum PairOutcome {
    Done(GenerateOutcome),
    Failed(String),
}

/// Attempts every pair. Per-pair failures are logged to the run manifest and
/// counted; only an unusable output directory aborts the batch.
pub fn run_batch(
    pairs: &[MorphPair],
    ablation: &AblationConfig,
    settings: &RunSettings,
    ctx: &Context<'_>,
    out_dir: &Path,
    manifest: &RunManifest,
) -> Result<RunReport> {
    if pairs.is_empty() {
        return Err(Error::input("pair list is empty"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let probe = out_dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(out_dir, e))?;
    let _ = fs::remove_file(&probe);

    let start = Instant::now();
    let outcomes = parallel_map(pairs, settings.max_jobs, |pair| {
        let result = build_request(pair, ablation, settings, ctx).and_then(|req| {
            generate(
                &req,
                ablation.variant,
                ctx.generation,
                out_dir,
                manifest,
                &settings.config_hash,
            )
        });
        match result {
            Ok(o) => PairOutcome::Done(o),
            Err(e) => {
                let msg = e.to_string();
                let record = RunRecord {
                    pair_id: pair.pair_id.clone(),
                    variant: ablation.variant.as_str().to_string(),
                    fingerprint: None,
                    request_fingerprint: None,
                    output: None,
                    seed: None,
                    status: Status::Failed,
                    error: Some(msg.clone()),
                    backend: ctx.generation.name().to_string(),
                    config_hash: settings.config_hash.clone(),
                    timestamp_ms: now_ms(),
                };
                if let Err(e) = manifest.append(&record) {
                    log::error!("cannot record failure of {}: {e}", pair.pair_id);
                }
                PairOutcome::Failed(msg)
            }
        }
    });

    let mut report = RunReport {
        pairs: pairs.len(),
        ..RunReport::default()
    };
    for (pair, outcome) in pairs.iter().zip(outcomes) {
        match outcome {
            PairOutcome::Done(o) => {
                if o.backend_calls == 0 {
                    report.skipped += 1;
                } else {
                    report.succeeded += 1;
                }
                report.backend_calls += o.backend_calls;
                report.artifacts.extend(o.artifacts);
            }
            PairOutcome::Failed(msg) => {
                report.failed += 1;
                report.failures.push((pair.pair_id.clone(), msg));
            }
        }
    }
    report.elapsed_secs = start.elapsed().as_secs_f64();
    report.mean_pair_secs = report.elapsed_secs / pairs.len() as f64;
    Ok(report)
}
