//! Morph-pair selection by same-gender cosine similarity.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::slerp::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Gender::Female),
            "male" | "m" => Ok(Gender::Male),
            "unknown" | "u" | "" => Ok(Gender::Unknown),
            _ => Err(Error::InvalidRequest("unrecognized gender label")),
        }
    }
}

/// A subject in a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub gender: Gender,
    /// Image IDs in manifest order; never empty.
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorphPair {
    pub pair_id: String,
    pub subject_a: String,
    pub subject_b: String,
    pub similarity: f64,
}

/// Pair ID for an unordered subject pair: `"{min}__{max}"`.
pub fn pair_id(a: &str, b: &str) -> String {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    format!("{lo}__{hi}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionParams {
    pub top_k: usize,
    pub max_pairs: Option<usize>,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            top_k: 3,
            max_pairs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSelection {
    pub pairs: Vec<MorphPair>,
    /// Gender classes skipped because they hold fewer than two subjects.
    pub skipped_classes: Vec<(Gender, usize)>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    (dot(a, b) / (norm(a) * norm(b))).clamp(-1.0, 1.0)
}

/// Pairs every subject with its `top_k` most similar peers of the same
/// gender class. Unordered duplicates collapse to one pair; output is sorted
/// by descending similarity, then ascending pair ID, and truncated to
/// `max_pairs` when set.
pub fn select_pairs(
    subjects: &[SubjectRecord],
    embeddings: &BTreeMap<String, Vec<f64>>,
    params: SelectionParams,
) -> Result<PairSelection> {
    if params.top_k == 0 {
        return Err(Error::InvalidParameter {
            name: "top_k",
            value: 0.0,
        });
    }

    let mut classes: BTreeMap<Gender, Vec<(&str, &[f64])>> = BTreeMap::new();
    let mut dim = None;
    let mut seen = BTreeMap::new();
    for s in subjects {
        if seen.insert(s.subject_id.as_str(), ()).is_some() {
            return Err(Error::DuplicateId(s.subject_id.clone()));
        }
        let e = embeddings
            .get(&s.subject_id)
            .ok_or_else(|| Error::MissingEmbedding(s.subject_id.clone()))?;
        match dim {
            None => dim = Some(e.len()),
            Some(d) if d != e.len() => {
                return Err(Error::DimensionMismatch {
                    what: "subject embedding",
                    expected: d,
                    found: e.len(),
                })
            }
            _ => {}
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("subject embedding"));
        }
        if norm(e) == 0.0 {
            return Err(Error::ZeroNorm("subject embedding"));
        }
        classes.entry(s.gender).or_default().push((&s.subject_id, e));
    }

    let mut unique: BTreeMap<String, MorphPair> = BTreeMap::new();
    let mut skipped_classes = Vec::new();
    for (gender, mut members) in classes {
        if members.len() < 2 {
            skipped_classes.push((gender, members.len()));
            continue;
        }
        members.sort_by(|a, b| a.0.cmp(b.0));
        for (i, &(id, e)) in members.iter().enumerate() {
            let mut peers: Vec<(&str, f64)> = members
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &(other, f))| {
                    // Evaluate in canonical order so (a,b) and (b,a) agree bit-for-bit.
                    let sim = if id < other { cosine(e, f) } else { cosine(f, e) };
                    (other, sim)
                })
                .collect();
            peers.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            for &(other, similarity) in peers.iter().take(params.top_k) {
                let (lo, hi) = if id < other { (id, other) } else { (other, id) };
                let pid = pair_id(lo, hi);
                unique.entry(pid.clone()).or_insert_with(|| MorphPair {
                    pair_id: pid,
                    subject_a: lo.into(),
                    subject_b: hi.into(),
                    similarity,
                });
            }
        }
    }

    let mut pairs: Vec<MorphPair> = unique.into_values().collect();
    pairs.sort_by(|a, b| match b.similarity.total_cmp(&a.similarity) {
        Ordering::Equal => a.pair_id.cmp(&b.pair_id),
        o => o,
    });
    if let Some(cap) = params.max_pairs {
        pairs.truncate(cap);
    }
    Ok(PairSelection {
        pairs,
        skipped_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn subject(id: &str, gender: Gender) -> SubjectRecord {
        SubjectRecord {
            subject_id: id.to_string(),
            gender,
            images: vec![format!("{id}_0")],
        }
    }

    #[test]
    fn hand_computed_three_subjects() {
        let subjects = [
            subject("A", Gender::Female),
            subject("B", Gender::Female),
            subject("C", Gender::Female),
        ];
        let mut emb = BTreeMap::new();
        emb.insert("A".to_string(), vec![1.0, 0.0]);
        emb.insert("B".to_string(), vec![0.8, 0.6]);
        emb.insert("C".to_string(), vec![0.0, 1.0]);
        let sel = select_pairs(&subjects, &emb, SelectionParams { top_k: 1, max_pairs: None }).unwrap();
        assert_eq!(sel.pairs.len(), 2);
        assert_eq!((sel.pairs[0].subject_a.as_str(), sel.pairs[0].subject_b.as_str()), ("A", "B"));
        assert!((sel.pairs[0].similarity - 0.8).abs() < 1e-12);
        assert_eq!((sel.pairs[1].subject_a.as_str(), sel.pairs[1].subject_b.as_str()), ("B", "C"));
        assert!((sel.pairs[1].similarity - 0.6).abs() < 1e-12);
    }

    #[test]
    fn single_subject_skips_class() {
        let mut emb = BTreeMap::new();
        emb.insert("A".to_string(), vec![1.0, 0.0]);
        let sel = select_pairs(&[subject("A", Gender::Male)], &emb, SelectionParams::default()).unwrap();
        assert!(sel.pairs.is_empty());
        assert_eq!(sel.skipped_classes, vec![(Gender::Male, 1)]);
    }

    #[test]
    fn identical_embeddings_rank_first() {
        let subjects = [
            subject("x", Gender::Male),
            subject("y", Gender::Male),
            subject("z", Gender::Male),
        ];
        let mut emb = BTreeMap::new();
        emb.insert("x".to_string(), vec![0.6, 0.8]);
        emb.insert("y".to_string(), vec![0.6, 0.8]);
        emb.insert("z".to_string(), vec![1.0, 0.0]);
        let sel = select_pairs(&subjects, &emb, SelectionParams::default()).unwrap();
        assert_eq!(sel.pairs[0].pair_id, "x__y");
        assert_eq!(sel.pairs[0].similarity, 1.0);
    }

    #[test]
    fn genders_never_cross() {
        let subjects = [
            subject("a", Gender::Female),
            subject("b", Gender::Male),
            subject("c", Gender::Unknown),
            subject("d", Gender::Unknown),
        ];
        let mut emb = BTreeMap::new();
        for id in ["a", "b", "c", "d"] {
            emb.insert(id.to_string(), vec![1.0, 0.1]);
        }
        let sel = select_pairs(&subjects, &emb, SelectionParams::default()).unwrap();
        assert_eq!(sel.pairs.len(), 1);
        assert_eq!(sel.pairs[0].pair_id, "c__d");
        assert_eq!(sel.skipped_classes.len(), 2);
    }

    #[test]
    fn missing_embedding_is_an_error() {
        let emb = BTreeMap::new();
        assert_eq!(
            select_pairs(&[subject("q", Gender::Male)], &emb, SelectionParams::default()),
            Err(Error::MissingEmbedding("q".to_string()))
        );
    }

    #[test]
    fn max_pairs_caps_output() {
        let subjects: Vec<_> = (0..6).map(|i| subject(&i.to_string(), Gender::Female)).collect();
        let mut emb = BTreeMap::new();
        for i in 0..6 {
            emb.insert(i.to_string(), vec![1.0, i as f64 * 0.3]);
        }
        let sel = select_pairs(&subjects, &emb, SelectionParams { top_k: 3, max_pairs: Some(2) }).unwrap();
        assert_eq!(sel.pairs.len(), 2);
    }

    #[test]
    fn gender_parsing() {
        assert_eq!("F".parse::<Gender>().unwrap(), Gender::Female);
        assert_eq!("male".parse::<Gender>().unwrap(), Gender::Male);
        assert!("x".parse::<Gender>().is_err());
    }
}
