#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::collections::BTreeMap;

use stablemorph::backend::stub::{StubGenerator, StubRecognition};
use stablemorph::backend::{
    Capabilities, FineTuneJob, GeneratedImage, GenerationBackend, RecognitionBackend,
};
use stablemorph::corpus::{ingest, LayoutDescriptor, Manifest};
use stablemorph::pipeline::{Context, Stores};
use stablemorph::BackendError;
use stablemorph::core::{GenerationRequest, MorphPair, WeightArray, pair_id};

pub const PATTERN: &str = r"^(?P<subject>s\d{3})/(?P<image>s\d{3}_\d{2})\.png$";

pub fn layout(subjects: usize) -> LayoutDescriptor {
    let genders = (0..subjects)
        .map(|s| (format!("s{s:03}"), if s % 2 == 0 { "f" } else { "m" }.to_string()))
        .collect();
    LayoutDescriptor {
        dataset: "synthetic".into(),
        pattern: PATTERN.into(),
        frontal: vec![],
        neutral: vec![],
        extensions: vec!["png".into()],
        genders,
        gender_file: None,
        frontal_neutral_only: true,
    }
}

pub fn layout_toml(subjects: usize) -> String {
    let mut s = format!("dataset = \"synthetic\"\npattern = '{PATTERN}'\nextensions = [\"png\"]\n[genders]\n");
    for i in 0..subjects {
        s.push_str(&format!("s{i:03} = \"{}\"\n", if i % 2 == 0 { "f" } else { "m" }));
    }
    s
}

/// Small PNG whose pixels depend on subject and image index.
pub fn write_png(path: &Path, subject: usize, image: usize) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let img = image::RgbImage::from_fn(8, 8, |x, y| {
        image::Rgb([
            (subject * 7 + x as usize * 3) as u8,
            (image * 11 + y as usize * 5) as u8,
            ((subject + image + (x * y) as usize) * 13) as u8,
        ])
    });
    img.save(path).unwrap();
}

pub fn write_corpus(root: &Path, subjects: usize, per_subject: usize) {
    for s in 0..subjects {
        for i in 0..per_subject {
            write_png(&root.join(format!("s{s:03}/s{s:03}_{i:02}.png")), s, i);
        }
    }
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub manifest: Manifest,
    pub stores: Stores,
    pub out: PathBuf,
}

impl Fixture {
    pub fn new(subjects: usize, per_subject: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("data");
        write_corpus(&root, subjects, per_subject);
        let manifest = ingest(&root, &layout(subjects)).unwrap();
        let stores = Stores::new(&dir.path().join("cache"));
        let out = dir.path().join("out");
        Self {
            dir,
            manifest,
            stores,
            out,
        }
    }

    pub fn ctx<'a>(&'a self, rec: &'a dyn RecognitionBackend, gen: &'a dyn GenerationBackend) -> Context<'a> {
        Context {
            manifest: &self.manifest,
            stores: &self.stores,
            recognition: rec,
            generation: gen,
        }
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.manifest.subjects.iter().map(|s| s.subject_id.clone()).collect()
    }

    /// First `n` unordered subject pairs in lexicographic order.
    pub fn pairs(&self, n: usize) -> Vec<MorphPair> {
        let ids = self.subject_ids();
        let mut out = Vec::new();
        'outer: for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                if out.len() == n {
                    break 'outer;
                }
                out.push(MorphPair {
                    pair_id: pair_id(&ids[i], &ids[j]),
                    subject_a: ids[i].clone(),
                    subject_b: ids[j].clone(),
                    similarity: 0.5,
                });
            }
        }
        assert_eq!(out.len(), n, "not enough subjects for {n} pairs");
        out
    }
}

/// Generation backend wrapper that counts calls and can be told to fail.
pub struct Counting {
    pub inner: StubGenerator,
    pub fine_tunes: AtomicUsize,
    pub generations: AtomicUsize,
    pub fail_pair: Option<String>,
    pub fail_subject: Option<String>,
}

impl Counting {
    pub fn new() -> Self {
        Self {
            inner: StubGenerator::default(),
            fine_tunes: AtomicUsize::new(0),
            generations: AtomicUsize::new(0),
            fail_pair: None,
            fail_subject: None,
        }
    }

    pub fn generations(&self) -> usize {
        self.generations.load(Ordering::SeqCst)
    }

    pub fn fine_tunes(&self) -> usize {
        self.fine_tunes.load(Ordering::SeqCst)
    }
}

impl GenerationBackend for Counting {
    fn name(&self) -> &str {
        "stub"
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn fine_tune(&self, job: &FineTuneJob<'_>) -> Result<BTreeMap<String, WeightArray>, BackendError> {
        self.fine_tunes.fetch_add(1, Ordering::SeqCst);
        if self.fail_subject.as_deref() == Some(job.subject_id) {
            return Err(BackendError::new("cannot read training image"));
        }
        self.inner.fine_tune(job)
    }

    fn generate(&self, request: &GenerationRequest, seed: u64) -> Result<GeneratedImage, BackendError> {
        self.generations.fetch_add(1, Ordering::SeqCst);
        if self.fail_pair.as_deref() == Some(request.pair_id.as_str()) {
            return Err(BackendError::new("out of memory"));
        }
        self.inner.generate(request, seed)
    }
}

pub fn stub_recognition() -> Arc<StubRecognition> {
    Arc::new(StubRecognition::default())
}
