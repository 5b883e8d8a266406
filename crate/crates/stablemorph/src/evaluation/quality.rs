//! Image quality scoring and mean ± std reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use stablemorph_core::metrics::{aggregate_report, CellKey, QualityReport};
use walkdir::WalkDir;

use super::tsv_rows;
use crate::backend::QualityScorer;
use crate::error::{Error, Result};
use crate::fsutil::{create_once, read_to_string, sha256_file, sha256_hex, write_atomic};
use crate::pipeline::parallel_map;

pub const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "ppm", "bmp"];

/// Images of one method on one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    pub method: String,
    pub dataset: String,
    pub images: Vec<PathBuf>,
}

/// Image files below `dir`, sorted by path.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(path, e.into())
        })?;
        let is_image = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if entry.file_type().is_file() && is_image {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

/// Discovers `<root>/<method>/<dataset>/**/image` sets.
pub fn discover_sets(root: &Path) -> Result<Vec<ImageSet>> {
    let mut sets = Vec::new();
    for method in sorted_dirs(root)? {
        for dataset in sorted_dirs(&method)? {
            let images = list_images(&dataset)?;
            if images.is_empty() {
                continue;
            }
            sets.push(ImageSet {
                method: file_name(&method),
                dataset: file_name(&dataset),
                images,
            });
        }
    }
    if sets.is_empty() {
        return Err(Error::input(format!(
            "{}: no <method>/<dataset>/ image directories found",
            root.display()
        )));
    }
    Ok(sets)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let e = e.map_err(|e| Error::io(dir, e))?;
        if e.file_type().map_err(|err| Error::io(e.path(), err))?.is_dir() {
            out.push(e.path());
        }
    }
    out.sort();
    Ok(out)
}

/// Scores keyed by image content and scorer identity.
#[derive(Debug, Clone)]
pub struct QualityCache {
    dir: PathBuf,
}

impl QualityCache {
    pub fn new(cache_root: &Path) -> Self {
        Self {
            dir: cache_root.join("quality"),
        }
    }

    pub fn key(image_digest: &str, scorer: &dyn QualityScorer) -> String {
        sha256_hex(format!("{image_digest}\0{}\0{}", scorer.name(), scorer.version()).as_bytes())
    }

    pub fn load(&self, key: &str) -> Result<Option<f64>> {
        let path = self.dir.join(key);
        match fs::read_to_string(&path) {
            Ok(s) => s
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| Error::Integrity(format!("{}: corrupt cached score", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn store(&self, key: &str, score: f64) -> Result<()> {
        create_once(&self.dir.join(key), format!("{score:?}").as_bytes()).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityScore {
    pub method: String,
    pub dataset: String,
    pub metric: String,
    pub image: PathBuf,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityFailure {
    pub image: PathBuf,
    pub metric: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QualityRun {
    pub scores: Vec<QualityScore>,
    pub failures: Vec<QualityFailure>,
    pub cache_hits: usize,
    pub scorer_calls: usize,
}

enum Scored {
    Hit(f64),
    Fresh(f64),
    Failed(String),
}

/// Scores every image with every scorer. Unreadable or unscorable images
/// are recorded as failures and left out of the score vectors.
pub fn score_quality(
    sets: &[ImageSet],
    scorers: &[&dyn QualityScorer],
    cache: &QualityCache,
    jobs: usize,
) -> Result<QualityRun> {
    if scorers.is_empty() {
        return Err(Error::Config("no quality scorers selected".into()));
    }
    let mut tasks = Vec::new();
    for set in sets {
        for image in &set.images {
            for &scorer in scorers {
                tasks.push((set, image, scorer));
            }
        }
    }
    let results = parallel_map(&tasks, jobs, |&(_, image, scorer)| -> Result<Scored> {
        let digest = match sha256_file(image) {
            Ok(d) => d,
            Err(e) => return Ok(Scored::Failed(e.to_string())),
        };
        let key = QualityCache::key(&digest, scorer);
        if let Some(s) = cache.load(&key)? {
            return Ok(Scored::Hit(s));
        }
        match scorer.score(image) {
            Ok(s) if s.is_finite() => {
                cache.store(&key, s)?;
                Ok(Scored::Fresh(s))
            }
            Ok(s) => Ok(Scored::Failed(format!("scorer returned {s}"))),
            Err(e) => Ok(Scored::Failed(e.to_string())),
        }
    });
    let mut run = QualityRun::default();
    for ((set, image, scorer), r) in tasks.into_iter().zip(results) {
        let score = match r? {
            Scored::Hit(s) => {
                run.cache_hits += 1;
                s
            }
            Scored::Fresh(s) => {
                run.scorer_calls += 1;
                s
            }
            Scored::Failed(message) => {
                run.scorer_calls += 1;
                log::warn!("{}: {} failed: {message}", image.display(), scorer.name());
                run.failures.push(QualityFailure {
                    image: image.clone(),
                    metric: scorer.name().to_string(),
                    message,
                });
                continue;
            }
        };
        run.scores.push(QualityScore {
            method: set.method.clone(),
            dataset: set.dataset.clone(),
            metric: scorer.name().to_string(),
            image: image.clone(),
            score,
        });
    }
    Ok(run)
}

pub const QUALITY_HEADER: &str = "method\tdataset\tmetric\timage\tscore";

pub fn quality_scores_to_tsv(scores: &[QualityScore]) -> String {
    let mut out = format!("{QUALITY_HEADER}\n");
    for s in scores {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:?}",
            s.method,
            s.dataset,
            s.metric,
            s.image.display(),
            s.score
        );
    }
    out
}

pub fn parse_quality_scores(text: &str) -> Result<Vec<QualityScore>> {
    let mut rows = tsv_rows(text);
    match rows.next() {
        Some((_, h)) if h.join("\t") == QUALITY_HEADER => {}
        _ => return Err(Error::input(format!("quality score file: expected header {QUALITY_HEADER}"))),
    }
    rows.map(|(n, c)| {
        if c.len() != 5 {
            return Err(Error::input(format!("quality score file line {n}: expected 5 columns")));
        }
        let score: f64 = c[4]
            .parse()
            .map_err(|_| Error::input(format!("quality score file line {n}: bad score {:?}", c[4])))?;
        Ok(QualityScore {
            method: c[0].into(),
            dataset: c[1].into(),
            metric: c[2].into(),
            image: c[3].into(),
            score,
        })
    })
    .collect()
}

pub fn build_report(scores: &[QualityScore]) -> Result<QualityReport> {
    let mut vectors: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for s in scores {
        vectors
            .entry(CellKey::new(&s.method, &s.dataset, &s.metric))
            .or_default()
            .push(s.score);
    }
    if vectors.is_empty() {
        return Err(Error::input("no quality scores to report"));
    }
    Ok(aggregate_report(vectors)?)
}

/// Methods as rows, (dataset, metric) as columns, cells `mean±std`.
pub fn report_table(report: &QualityReport) -> String {
    let columns = report.columns();
    let mut out = String::from("# std: sample (N-1)\nmethod");
    for (d, m) in &columns {
        let _ = write!(out, "\t{d}/{m}");
    }
    out.push('\n');
    for method in report.methods() {
        out.push_str(method);
        for (d, m) in &columns {
            let cell = report
                .cells
                .get(&CellKey::new(method, *d, *m))
                .map(|c| c.formatted())
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, "\t{cell}");
        }
        out.push('\n');
    }
    out
}

pub fn report_stats(report: &QualityReport) -> String {
    let mut out = String::from("method\tdataset\tmetric\tcount\tmean\tstd\n");
    for (k, c) in &report.cells {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:?}\t{:?}",
            k.method, k.dataset, k.metric, c.count, c.mean, c.std
        );
    }
    out
}

/// Raw scores for one metric: `method  dataset  score` rows.
pub fn raw_scores(report: &QualityReport, metric: &str) -> String {
    let mut out = String::from("method\tdataset\tscore\n");
    for (k, values) in report.raw.iter().filter(|(k, _)| k.metric == metric) {
        for v in values {
            let _ = writeln!(out, "{}\t{}\t{v:?}", k.method, k.dataset);
        }
    }
    out
}

/// Writes `report.tsv`, `stats.tsv` and one `raw_<metric>.tsv` per metric.
pub fn write_report(dir: &Path, report: &QualityReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, body.as_bytes())?;
        written.push(p);
        Ok(())
    };
    put("report.tsv".into(), report_table(report))?;
    put("stats.tsv".into(), report_stats(report))?;
    for metric in report.metrics() {
        put(format!("raw_{metric}.tsv"), raw_scores(report, metric))?;
    }
    Ok(written)
}

/// Reads a raw score export back into per-method vectors (datasets pooled).
pub fn read_raw_scores(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let text = read_to_string(path)?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (n, c) in tsv_rows(&text).skip(1) {
        let v = c
            .get(2)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::input(format!("{} line {n}: bad raw score row", path.display())))?;
        out.entry(c[0].to_string()).or_default().push(v);
    }
    if out.is_empty() {
        return Err(Error::input(format!("{}: raw score file has no scores", path.display())));
    }
    Ok(out)
}
