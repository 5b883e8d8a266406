//! Morphing Attack Potential.
//!
//! Cell `[r, c]` of the MAP matrix is the percentage of morphs that match
//! both contributing subjects in at least `r` verification attempts on at
//! least `c` recognition systems.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::threshold::ThresholdSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SubjectRole {
    A,
    B,
}

impl SubjectRole {
    pub fn as_char(self) -> char {
        match self {
            SubjectRole::A => 'a',
            SubjectRole::B => 'b',
        }
    }

    fn index(self) -> usize {
        match self {
            SubjectRole::A => 0,
            SubjectRole::B => 1,
        }
    }
}

impl FromStr for SubjectRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "A" => Ok(SubjectRole::A),
            "b" | "B" => Ok(SubjectRole::B),
            _ => Err(Error::InvalidRequest("subject role must be a or b")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatedScore {
    pub morph_id: String,
    pub role: SubjectRole,
    pub frs_id: String,
    /// 1-based.
    pub attempt: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonMatedScore {
    pub frs_id: String,
    pub score: f64,
}

/// Morph-versus-subject scores for every attempt, plus the non-mated scores
/// each system's threshold is calibrated on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonScoreSet {
    pub mated: Vec<MatedScore>,
    pub non_mated: Vec<NonMatedScore>,
    /// Attempts per subject (`T`).
    pub attempts: u32,
}

impl ComparisonScoreSet {
    /// Builds a set whose attempt count is the largest attempt index seen.
    pub fn from_records(mated: Vec<MatedScore>, non_mated: Vec<NonMatedScore>) -> Self {
        let attempts = mated.iter().map(|m| m.attempt).max().unwrap_or(0);
        Self {
            mated,
            non_mated,
            attempts,
        }
    }

    pub fn morph_ids(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.mated.iter().map(|m| m.morph_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Systems appearing in either mated or non-mated records, sorted.
    pub fn frs_ids(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .mated
            .iter()
            .map(|m| m.frs_id.as_str())
            .chain(self.non_mated.iter().map(|m| m.frs_id.as_str()))
            .collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn non_mated_pairs(&self) -> impl Iterator<Item = (&str, f64)> {
        self.non_mated.iter().map(|m| (m.frs_id.as_str(), m.score))
    }
}

/// How per-attempt matches combine across the two contributing subjects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapSemantics {
    /// Count matched attempts per subject, then take the minimum.
    #[default]
    PerSubjectMin,
    /// Count attempt indices at which both subjects match.
    SameAttempt,
}

impl MapSemantics {
    pub fn as_str(self) -> &'static str {
        match self {
            MapSemantics::PerSubjectMin => "per-subject-min",
            MapSemantics::SameAttempt => "same-attempt",
        }
    }
}

impl FromStr for MapSemantics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-subject-min" => Ok(MapSemantics::PerSubjectMin),
            "same-attempt" => Ok(MapSemantics::SameAttempt),
            _ => Err(Error::InvalidRequest("unknown MAP semantics")),
        }
    }
}

/// Matched-attempt count per (morph_id, frs_id).
pub type AttemptCounts = BTreeMap<(String, String), u32>;

pub fn attempt_match_counts(
    scores: &ComparisonScoreSet,
    thresholds: &ThresholdSet,
    semantics: MapSemantics,
) -> Result<AttemptCounts> {
    let t_max = scores.attempts;
    if t_max == 0 {
        return Err(Error::Empty("verification attempts"));
    }
    let frs_ids = scores.frs_ids();
    let morph_ids = scores.morph_ids();

    // (morph, frs) -> per role, per attempt score
    let mut grid: BTreeMap<(&str, &str), [Vec<Option<f64>>; 2]> = BTreeMap::new();
    for m in &scores.mated {
        if m.attempt == 0 || m.attempt > t_max {
            return Err(Error::InvalidParameter {
                name: "attempt index",
                value: f64::from(m.attempt),
            });
        }
        let slot = grid
            .entry((m.morph_id.as_str(), m.frs_id.as_str()))
            .or_insert_with(|| [vec![None; t_max as usize], vec![None; t_max as usize]]);
        let cell = &mut slot[m.role.index()][(m.attempt - 1) as usize];
        if cell.is_some() {
            return Err(Error::DuplicateAttempt {
                morph_id: m.morph_id.clone(),
                role: m.role.as_char(),
                frs_id: m.frs_id.clone(),
                attempt: m.attempt,
            });
        }
        if !m.score.is_finite() {
            return Err(Error::NonFinite("mated score"));
        }
        *cell = Some(m.score);
    }

    let mut counts = AttemptCounts::new();
    for morph in &morph_ids {
        for frs in &frs_ids {
            let tau = thresholds.get(frs)?;
            let missing = |role: SubjectRole, attempt: u32| Error::MissingAttempt {
                morph_id: morph.clone(),
                role: role.as_char(),
                frs_id: frs.clone(),
                attempt,
            };
            let slot = grid
                .get(&(morph.as_str(), frs.as_str()))
                .ok_or_else(|| missing(SubjectRole::A, 1))?;
            let mut matched: Vec<[bool; 2]> = Vec::with_capacity(t_max as usize);
            #[allow(clippy::needless_range_loop)]
            for t in 0..t_max as usize {
                let mut row = [false; 2];
                for role in [SubjectRole::A, SubjectRole::B] {
                    let s = slot[role.index()][t].ok_or_else(|| missing(role, t as u32 + 1))?;
                    row[role.index()] = s >= tau;
                }
                matched.push(row);
            }
            let a = match semantics {
                MapSemantics::PerSubjectMin => {
                    let ca = matched.iter().filter(|r| r[0]).count();
                    let cb = matched.iter().filter(|r| r[1]).count();
                    ca.min(cb)
                }
                MapSemantics::SameAttempt => matched.iter().filter(|r| r[0] && r[1]).count(),
            };
            counts.insert((morph.clone(), frs.clone()), a as u32);
        }
    }
    Ok(counts)
}

/// `attempts × frs_count` percentage matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MapMatrix {
    pub attempts: u32,
    pub frs_count: usize,
    pub morph_count: usize,
    /// Row-major; row `r-1` holds "at least r attempts".
    pub values: Vec<f64>,
    /// Number of qualifying morphs behind each cell.
    pub successes: Vec<usize>,
}

impl MapMatrix {
    /// Cell for at least `r` attempts on at least `c` systems (1-based).
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[(r - 1) * self.frs_count + (c - 1)]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[(r - 1) * self.frs_count..r * self.frs_count]
    }
}

impl fmt::Display for MapMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("r\\c")?;
        for c in 1..=self.frs_count {
            write!(f, "\t{c}")?;
        }
        for r in 1..=self.attempts as usize {
            write!(f, "\n{r}")?;
            for v in self.row(r) {
                write!(f, "\t{v:.1}")?;
            }
        }
        Ok(())
    }
}

pub fn compute_map(
    counts: &AttemptCounts,
    attempts: u32,
    frs_ids: &[String],
    morph_count: usize,
) -> Result<MapMatrix> {
    if morph_count == 0 {
        return Err(Error::Empty("morph set"));
    }
    if attempts == 0 || frs_ids.is_empty() {
        return Err(Error::Empty("MAP dimensions"));
    }
    let morphs: BTreeSet<&str> = counts.keys().map(|(m, _)| m.as_str()).collect();
    if morphs.len() != morph_count {
        return Err(Error::DimensionMismatch {
            what: "morph count",
            expected: morph_count,
            found: morphs.len(),
        });
    }

    let cols = frs_ids.len();
    let mut successes = vec![0usize; attempts as usize * cols];
    let mut per_frs = Vec::with_capacity(cols);
    for morph in morphs {
        per_frs.clear();
        for frs in frs_ids {
            let a = *counts
                .get(&(morph.into(), frs.clone()))
                .ok_or_else(|| Error::MissingCount {
                    morph_id: morph.into(),
                    frs_id: frs.clone(),
                })?;
            if a > attempts {
                return Err(Error::InvalidParameter {
                    name: "attempt count",
                    value: f64::from(a),
                });
            }
            per_frs.push(a);
        }
        // With counts sorted descending, "at least r attempts on at least c
        // systems" holds exactly when the c-th largest count is >= r.
        per_frs.sort_unstable_by(|x, y| y.cmp(x));
        for (c, &a) in per_frs.iter().enumerate() {
            for r in 1..=a as usize {
                successes[(r - 1) * cols + c] += 1;
            }
        }
    }

    let values = successes
        .iter()
        .map(|&k| 100.0 * k as f64 / morph_count as f64)
        .collect();
    Ok(MapMatrix {
        attempts,
        frs_count: cols,
        morph_count,
        values,
        successes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;

    fn set(morphs: usize, frs: &[&str], t: u32, score: impl Fn(usize, SubjectRole, usize, u32) -> f64) -> ComparisonScoreSet {
        let mut mated = Vec::new();
        for m in 0..morphs {
            for (fi, f) in frs.iter().enumerate() {
                for role in [SubjectRole::A, SubjectRole::B] {
                    for a in 1..=t {
                        mated.push(MatedScore {
                            morph_id: format!("m{m}"),
                            role,
                            frs_id: f.to_string(),
                            attempt: a,
                            score: score(m, role, fi, a),
                        });
                    }
                }
            }
        }
        let non_mated = frs
            .iter()
            .flat_map(|f| (0..1000).map(move |i| NonMatedScore { frs_id: f.to_string(), score: i as f64 / 1000.0 }))
            .collect();
        ComparisonScoreSet::from_records(mated, non_mated)
    }

    fn thresholds(frs: &[&str], tau: f64) -> ThresholdSet {
        ThresholdSet {
            target_fmr: 0.001,
            thresholds: frs.iter().map(|f| (f.to_string(), tau)).collect(),
        }
    }

    const FRS: [&str; 4] = ["arc", "ada", "mag", "sface"];

    fn frs_ids() -> Vec<String> {
        FRS.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn saturated_and_empty() {
        let s = set(5, &FRS, 3, |_, _, _, _| 1.0);
        let counts = attempt_match_counts(&s, &thresholds(&FRS, 0.5), MapSemantics::default()).unwrap();
        assert!(counts.values().all(|&a| a == 3));
        let map = compute_map(&counts, 3, &frs_ids(), 5).unwrap();
        assert!(map.values.iter().all(|&v| v == 100.0));

        let s = set(5, &FRS, 3, |_, _, _, _| 0.0);
        let counts = attempt_match_counts(&s, &thresholds(&FRS, 0.5), MapSemantics::default()).unwrap();
        let map = compute_map(&counts, 3, &frs_ids(), 5).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn min_rule() {
        let s = set(1, &["f"], 3, |_, role, _, _| if role == SubjectRole::A { 1.0 } else { 0.0 });
        let counts = attempt_match_counts(&s, &thresholds(&["f"], 0.5), MapSemantics::PerSubjectMin).unwrap();
        assert_eq!(counts[&("m0".to_string(), "f".to_string())], 0);
    }

    #[test]
    fn semantics_differ_on_staggered_attempts() {
        // a matches attempts 1,2; b matches attempts 2,3.
        let s = set(1, &["f"], 3, |_, role, _, t| match (role, t) {
            (SubjectRole::A, 1 | 2) | (SubjectRole::B, 2 | 3) => 1.0,
            _ => 0.0,
        });
        let th = thresholds(&["f"], 0.5);
        let key = ("m0".to_string(), "f".to_string());
        assert_eq!(attempt_match_counts(&s, &th, MapSemantics::PerSubjectMin).unwrap()[&key], 2);
        assert_eq!(attempt_match_counts(&s, &th, MapSemantics::SameAttempt).unwrap()[&key], 1);
    }

    #[test]
    fn threshold_is_inclusive() {
        let s = set(1, &["f"], 1, |_, _, _, _| 0.5);
        let counts = attempt_match_counts(&s, &thresholds(&["f"], 0.5), MapSemantics::default()).unwrap();
        assert_eq!(counts[&("m0".to_string(), "f".to_string())], 1);
    }

    #[test]
    fn missing_attempt_is_named() {
        let mut s = set(1, &["f"], 3, |_, _, _, _| 1.0);
        s.mated.retain(|m| !(m.role == SubjectRole::B && m.attempt == 2));
        let err = attempt_match_counts(&s, &thresholds(&["f"], 0.5), MapSemantics::default()).unwrap_err();
        assert_eq!(
            err,
            Error::MissingAttempt {
                morph_id: "m0".into(),
                role: 'b',
                frs_id: "f".into(),
                attempt: 2
            }
        );
    }

    #[test]
    fn duplicate_attempt_is_rejected() {
        let mut s = set(1, &["f"], 1, |_, _, _, _| 1.0);
        let dup = s.mated[0].clone();
        s.mated.push(dup);
        assert!(matches!(
            attempt_match_counts(&s, &thresholds(&["f"], 0.5), MapSemantics::default()),
            Err(Error::DuplicateAttempt { .. })
        ));
    }

    #[test]
    fn hand_checked_matrix() {
        // Two morphs, two systems, T = 2.
        let mut counts = AttemptCounts::new();
        counts.insert(("m0".into(), "x".into()), 2);
        counts.insert(("m0".into(), "y".into()), 1);
        counts.insert(("m1".into(), "x".into()), 0);
        counts.insert(("m1".into(), "y".into()), 1);
        let ids = ["x".to_string(), "y".to_string()];
        let map = compute_map(&counts, 2, &ids, 2).unwrap();
        assert_eq!(map.values, vec![100.0, 50.0, 50.0, 0.0]);
        assert_eq!(format!("{map}"), "r\\c\t1\t2\n1\t100.0\t50.0\n2\t50.0\t0.0");
    }

    #[test]
    fn compute_map_errors() {
        let counts = AttemptCounts::new();
        assert!(compute_map(&counts, 3, &frs_ids(), 0).is_err());
        let mut counts = AttemptCounts::new();
        counts.insert(("m0".into(), "arc".into()), 1);
        assert!(matches!(
            compute_map(&counts, 3, &frs_ids(), 1),
            Err(Error::MissingCount { .. })
        ));
    }
}
