//! Dataset ingestion into manifests, and morph-pair lists.
//!
//! The manifest is line-delimited JSON: one `header` record, then one
//! record per subject, included image and excluded file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use stablemorph_core::{pair_id, select_pairs, Gender, MorphPair, PairSelection, SelectionParams, SubjectRecord};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pose {
    Frontal,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expression {
    Neutral,
    Other,
}

/// Maps dataset files to subjects and pose/expression tags.
///
/// `pattern` is matched against each file's path relative to the dataset
/// root (with `/` separators). It must define a `subject` capture group and
/// may define `image`, `pose`, `expression` and `gender` groups. A missing
/// `pose`/`expression` group means frontal/neutral.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutDescriptor {
    pub dataset: String,
    pub pattern: String,
    #[serde(default)]
    pub frontal: Vec<String>,
    #[serde(default)]
    pub neutral: Vec<String>,
    #[serde(default = "default_extensions")]
    pub extensions: Vec<String>,
    /// Subject ID to gender label.
    #[serde(default)]
    pub genders: BTreeMap<String, String>,
    /// Optional two-column TSV (`subject_id`, `gender`) relative to the root.
    #[serde(default)]
    pub gender_file: Option<PathBuf>,
    #[serde(default = "yes")]
    pub frontal_neutral_only: bool,
}

fn default_extensions() -> Vec<String> {
    ["png", "jpg", "jpeg", "ppm", "bmp"].iter().map(|s| s.to_string()).collect()
}

fn yes() -> bool {
    true
}

impl LayoutDescriptor {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub subject_id: String,
    /// Relative to the manifest's dataset root.
    pub path: PathBuf,
    pub pose: Pose,
    pub expression: Expression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub gender: String,
    pub images: Vec<String>,
}

impl SubjectEntry {
    pub fn to_record(&self) -> Result<SubjectRecord> {
        Ok(SubjectRecord {
            subject_id: self.subject_id.clone(),
            gender: parse_gender(&self.gender)?,
            images: self.images.clone(),
        })
    }
}

fn parse_gender(s: &str) -> Result<Gender> {
    s.parse()
        .map_err(|_| Error::input(format!("unrecognized gender label {s:?}")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub top_k: usize,
    pub max_pairs: Option<usize>,
    pub pairs: usize,
    pub embedding_backend: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub dataset: String,
    pub root: PathBuf,
    pub files_scanned: usize,
    pub subjects: usize,
    pub images: usize,
    pub excluded: BTreeMap<String, usize>,
    #[serde(default)]
    pub selection: Option<SelectionRecord>,
    #[serde(default)]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub subjects: Vec<SubjectEntry>,
    pub images: Vec<ImageRecord>,
    pub exclusions: Vec<Exclusion>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line {
    Header(ManifestHeader),
    Subject(SubjectEntry),
    Image(ImageRecord),
    Excluded(Exclusion),
}

impl Manifest {
    pub fn subject(&self, id: &str) -> Option<&SubjectEntry> {
        self.subjects
            .binary_search_by(|s| s.subject_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.subjects[i])
    }

    pub fn image(&self, id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.image_id == id)
    }

    pub fn subject_records(&self) -> Result<Vec<SubjectRecord>> {
        self.subjects.iter().map(SubjectEntry::to_record).collect()
    }

    /// The first `n` images of a subject as (image_id, absolute path).
    pub fn subject_images(&self, subject_id: &str, n: usize) -> Result<Vec<(String, PathBuf)>> {
        let subject = self
            .subject(subject_id)
            .ok_or_else(|| Error::input(format!("subject {subject_id} not in manifest")))?;
        if subject.images.len() < n {
            return Err(Error::input(format!(
                "subject {subject_id} has {} images, {n} required",
                subject.images.len()
            )));
        }
        let by_id: BTreeMap<&str, &ImageRecord> =
            self.images.iter().map(|i| (i.image_id.as_str(), i)).collect();
        subject.images[..n]
            .iter()
            .map(|id| {
                let rec = by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::input(format!("image {id} listed for {subject_id} but not in manifest")))?;
                Ok((id.clone(), self.header.root.join(&rec.path)))
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &Line| {
            out.push_str(&serde_json::to_string(line).expect("manifest records serialize"));
            out.push('\n');
        };
        push(&Line::Header(self.header.clone()));
        self.subjects.iter().for_each(|s| push(&Line::Subject(s.clone())));
        self.images.iter().for_each(|i| push(&Line::Image(i.clone())));
        self.exclusions.iter().for_each(|e| push(&Line::Excluded(e.clone())));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = None;
        let (mut subjects, mut images, mut exclusions) = (Vec::new(), Vec::new(), Vec::new());
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Line = serde_json::from_str(line)
                .map_err(|e| Error::input(format!("manifest line {}: {e}", n + 1)))?;
            match rec {
                Line::Header(h) => header = Some(h),
                Line::Subject(s) => subjects.push(s),
                Line::Image(i) => images.push(i),
                Line::Excluded(e) => exclusions.push(e),
            }
        }
        let header = header.ok_or_else(|| Error::input("manifest has no header record"))?;
        subjects.sort_by(|a: &SubjectEntry, b| a.subject_id.cmp(&b.subject_id));
        Ok(Self {
            header,
            subjects,
            images,
            exclusions,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }
}

fn load_gender_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = read_to_string(path)?;
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(['\t', ',']);
        if let (Some(id), Some(g)) = (cols.next(), cols.next()) {
            if id == "subject_id" {
                continue;
            }
            out.insert(id.trim().to_string(), g.trim().to_string());
        }
    }
    Ok(out)
}

/// Scans `root` and classifies every file according to `layout`.
pub fn ingest(root: &Path, layout: &LayoutDescriptor) -> Result<Manifest> {
    let pattern = Regex::new(&layout.pattern)
        .map_err(|e| Error::Config(format!("layout pattern: {e}")))?;
    if !pattern.capture_names().any(|n| n == Some("subject")) {
        return Err(Error::Config("layout pattern needs a `subject` capture group".into()));
    }
    let meta = fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if !meta.is_dir() {
        return Err(Error::input(format!("{} is not a directory", root.display())));
    }
    let mut genders = layout.genders.clone();
    if let Some(file) = &layout.gender_file {
        genders.extend(load_gender_file(&root.join(file))?);
    }
    let extensions: BTreeSet<String> = layout.extensions.iter().map(|e| e.to_ascii_lowercase()).collect();

    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_file() {
            files.push(entry.into_path());
        }
    }

    let mut exclusions = Vec::new();
    let mut images: Vec<ImageRecord> = Vec::new();
    let mut subject_gender: BTreeMap<String, String> = BTreeMap::new();
    let mut seen_ids = BTreeSet::new();
    let mut exclude = |path: PathBuf, reason: &str| {
        exclusions.push(Exclusion {
            path,
            reason: reason.to_string(),
        })
    };

    for path in &files {
        let rel = path.strip_prefix(root).unwrap_or(path).to_path_buf();
        if let Some(gf) = &layout.gender_file {
            if rel == *gf {
                continue;
            }
        }
        let ext = rel
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        if !extensions.contains(&ext) {
            exclude(rel, "not an image file");
            continue;
        }
        let rel_str = rel.to_string_lossy().replace('\\', "/");
        let Some(caps) = pattern.captures(&rel_str) else {
            exclude(rel, "filename does not match layout");
            continue;
        };
        let subject_id = caps["subject"].to_string();
        let pose = match caps.name("pose") {
            Some(m) if !layout.frontal.iter().any(|f| f == m.as_str()) => Pose::Other,
            _ => Pose::Frontal,
        };
        let expression = match caps.name("expression") {
            Some(m) if !layout.neutral.iter().any(|f| f == m.as_str()) => Expression::Other,
            _ => Expression::Neutral,
        };
        if layout.frontal_neutral_only && pose != Pose::Frontal {
            exclude(rel, "non-frontal pose");
            continue;
        }
        if layout.frontal_neutral_only && expression != Expression::Neutral {
            exclude(rel, "non-neutral expression");
            continue;
        }
        let image_id = match caps.name("image") {
            Some(m) => m.as_str().to_string(),
            None => rel.with_extension("").to_string_lossy().replace('\\', "/"),
        };
        if !seen_ids.insert(image_id.clone()) {
            return Err(Error::input(format!("duplicate image id {image_id}")));
        }
        if let Some(g) = caps.name("gender") {
            subject_gender.insert(subject_id.clone(), g.as_str().to_string());
        }
        images.push(ImageRecord {
            image_id,
            subject_id,
            path: rel,
            pose,
            expression,
        });
    }

    images.sort_by(|a, b| (&a.subject_id, &a.image_id).cmp(&(&b.subject_id, &b.image_id)));
    let mut subjects: BTreeMap<String, SubjectEntry> = BTreeMap::new();
    for img in &images {
        let entry = subjects.entry(img.subject_id.clone()).or_insert_with(|| {
            let label = subject_gender
                .get(&img.subject_id)
                .or_else(|| genders.get(&img.subject_id))
                .cloned()
                .unwrap_or_else(|| "unknown".into());
            SubjectEntry {
                subject_id: img.subject_id.clone(),
                gender: label,
                images: Vec::new(),
            }
        });
        entry.images.push(img.image_id.clone());
    }
    let subjects: Vec<SubjectEntry> = subjects
        .into_values()
        .map(|mut s| {
            s.gender = parse_gender(&s.gender)?.as_str().to_string();
            Ok(s)
        })
        .collect::<Result<_>>()?;
    if subjects.is_empty() {
        return Err(Error::input(format!(
            "zero subjects after filtering {} files in {}",
            files.len(),
            root.display()
        )));
    }

    let mut excluded = BTreeMap::new();
    for e in &exclusions {
        *excluded.entry(e.reason.clone()).or_insert(0) += 1;
    }
    let header = ManifestHeader {
        dataset: layout.dataset.clone(),
        root: root.to_path_buf(),
        files_scanned: files.len(),
        subjects: subjects.len(),
        images: images.len(),
        excluded,
        selection: None,
        config_hash: None,
    };
    Ok(Manifest {
        header,
        subjects,
        images,
        exclusions,
    })
}

/// Runs pair selection over the manifest's subjects and records the
/// parameters in the manifest header.
pub fn select_manifest_pairs(
    manifest: &mut Manifest,
    embeddings: &BTreeMap<String, Vec<f64>>,
    params: SelectionParams,
    embedding_backend: &str,
) -> Result<PairSelection> {
    let subjects = manifest.subject_records()?;
    let selection = select_pairs(&subjects, embeddings, params)?;
    for (gender, count) in &selection.skipped_classes {
        log::warn!("gender class {gender} has {count} subject(s); skipped for pairing");
    }
    manifest.header.selection = Some(SelectionRecord {
        top_k: params.top_k,
        max_pairs: params.max_pairs,
        pairs: selection.pairs.len(),
        embedding_backend: embedding_backend.to_string(),
    });
    Ok(selection)
}

pub const PAIRS_HEADER: &str = "pair_id\tsubject_a\tsubject_b\tsimilarity";

pub fn pairs_to_tsv(pairs: &[MorphPair]) -> String {
    let mut out = String::from(PAIRS_HEADER);
    out.push('\n');
    for p in pairs {
        out.push_str(&format!("{}\t{}\t{}\t{:.6}\n", p.pair_id, p.subject_a, p.subject_b, p.similarity));
    }
    out
}

pub fn write_pairs(path: &Path, pairs: &[MorphPair]) -> Result<()> {
    write_atomic(path, pairs_to_tsv(pairs).as_bytes())
}

pub fn parse_pairs(text: &str) -> Result<Vec<MorphPair>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (n == 0 && line.starts_with("pair_id")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::input(format!("pairs line {}: expected 4 columns", n + 1)));
        }
        let similarity: f64 = cols[3]
            .parse()
            .map_err(|_| Error::input(format!("pairs line {}: bad similarity {:?}", n + 1, cols[3])))?;
        let expected = pair_id(cols[1], cols[2]);
        if cols[0] != expected {
            return Err(Error::input(format!(
                "pairs line {}: pair id {} does not match subjects (expected {expected})",
                n + 1,
                cols[0]
            )));
        }
        out.push(MorphPair {
            pair_id: cols[0].into(),
            subject_a: cols[1].into(),
            subject_b: cols[2].into(),
            similarity,
        });
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<Vec<MorphPair>> {
    parse_pairs(&read_to_string(path)?)
}

/// Writes an empty-directory-safe text file, used by tests and fixtures.
pub fn touch(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_has_zero_subjects() {
        let dir = tempfile::tempdir().unwrap();
        let err = ingest(dir.path(), &simple_layout()).unwrap_err();
        assert!(err.to_string().contains("zero subjects"), "{err}");
    }

    fn simple_layout() -> LayoutDescriptor {
        LayoutDescriptor {
            dataset: "toy".into(),
            pattern: r"^(?P<subject>[^/]+)/(?P<pose>[a-z]+)_(?P<expression>[a-z]+)_\d+\.png$".into(),
            frontal: vec!["front".into()],
            neutral: vec!["neutral".into()],
            extensions: default_extensions(),
            genders: [("s1".to_string(), "f".to_string())].into_iter().collect(),
            gender_file: None,
            frontal_neutral_only: true,
        }
    }

    #[test]
    fn two_subjects_three_images() {
        let dir = tempfile::tempdir().unwrap();
        for s in ["s1", "s2"] {
            for i in 0..3 {
                touch(&dir.path().join(format!("{s}/front_neutral_{i}.png")), b"x").unwrap();
            }
            touch(&dir.path().join(format!("{s}/side_neutral_0.png")), b"x").unwrap();
            touch(&dir.path().join(format!("{s}/front_smile_0.png")), b"x").unwrap();
        }
        touch(&dir.path().join("README.txt"), b"x").unwrap();
        let m = ingest(dir.path(), &simple_layout()).unwrap();
        assert_eq!(m.subjects.len(), 2);
        assert_eq!(m.images.len(), 6);
        assert_eq!(m.header.excluded["non-frontal pose"], 2);
        assert_eq!(m.header.excluded["non-neutral expression"], 2);
        assert_eq!(m.header.excluded["not an image file"], 1);
        assert_eq!(m.subject("s1").unwrap().gender, "female");
        assert_eq!(m.subject("s2").unwrap().gender, "unknown");

        let round = Manifest::parse(&m.to_jsonl()).unwrap();
        assert_eq!(round, m);
    }

    #[test]
    fn duplicate_image_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("s1/front_neutral_0.png"), b"x").unwrap();
        touch(&dir.path().join("s1/front_neutral_0.jpg"), b"x").unwrap();
        let mut l = simple_layout();
        l.pattern = r"^(?P<subject>[^/]+)/(?P<pose>[a-z]+)_(?P<expression>[a-z]+)_\d+\.(png|jpg)$".into();
        let err = ingest(dir.path(), &l).unwrap_err();
        assert!(err.to_string().contains("duplicate image id"), "{err}");
    }

    #[test]
    fn unreadable_root() {
        assert!(matches!(
            ingest(Path::new("/nonexistent/dataset"), &simple_layout()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn pattern_without_subject_group_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = simple_layout();
        l.pattern = r"^.*$".into();
        assert!(matches!(ingest(dir.path(), &l), Err(Error::Config(_))));
    }

    #[test]
    fn pairs_tsv_round_trip() {
        let pairs = vec![MorphPair {
            pair_id: "a__b".into(),
            subject_a: "a".into(),
            subject_b: "b".into(),
            similarity: 0.8,
        }];
        let text = pairs_to_tsv(&pairs);
        assert_eq!(text, "pair_id\tsubject_a\tsubject_b\tsimilarity\na__b\ta\tb\t0.800000\n");
        assert_eq!(parse_pairs(&text).unwrap(), pairs);
        assert!(parse_pairs("pair_id\tx\ny\n").is_err());
    }
}
