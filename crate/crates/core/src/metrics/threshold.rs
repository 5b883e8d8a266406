//! Decision thresholds at a fixed false match rate.
//!
//! A comparison matches when `score >= τ`. The calibrated `τ` is the
//! smallest observed non-mated score whose inclusive tail holds at most
//! `target_fmr · N` scores; when even the largest score is too frequent the
//! threshold is `+∞` and no comparison can match.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet {
    pub target_fmr: f64,
    pub thresholds: BTreeMap<String, f64>,
}

impl ThresholdSet {
    pub fn get(&self, frs_id: &str) -> Result<f64> {
        self.thresholds
            .get(frs_id)
            .copied()
            .ok_or_else(|| Error::MissingThreshold(frs_id.into()))
    }
}

/// Fraction of `scores` at or above `threshold`.
pub fn false_match_rate(scores: &[f64], threshold: f64) -> f64 {
    let hits = scores.iter().filter(|&&s| s >= threshold).count();
    hits as f64 / scores.len() as f64
}

/// Largest tail count `k` with `k / n <= target`, evaluated with the same
/// division [`false_match_rate`] performs.
fn allowed_matches(n: usize, target: f64) -> usize {
    let nf = n as f64;
    let mut k = libm::floor(target * nf) as usize;
    while k > 0 && k as f64 / nf > target {
        k -= 1;
    }
    while k < n && (k + 1) as f64 / nf <= target {
        k += 1;
    }
    k
}

pub fn calibrate_threshold(non_mated: &[f64], target_fmr: f64) -> Result<f64> {
    if non_mated.is_empty() {
        return Err(Error::Empty("non-mated scores"));
    }
    if !(target_fmr > 0.0 && target_fmr < 1.0) {
        return Err(Error::InvalidParameter {
            name: "target_fmr",
            value: target_fmr,
        });
    }
    if non_mated.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("non-mated scores"));
    }

    let allowed = allowed_matches(non_mated.len(), target_fmr);
    let mut sorted = non_mated.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    // Walk distinct values from the top; the tail at value v is every score
    // up to the last copy of v.
    let mut threshold = f64::INFINITY;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        if j > allowed {
            break;
        }
        threshold = v;
        i = j;
    }
    Ok(threshold)
}

/// Calibrates one threshold per FRS from `(frs_id, score)` pairs.
pub fn calibrate_thresholds<'a>(
    non_mated: impl IntoIterator<Item = (&'a str, f64)>,
    target_fmr: f64,
) -> Result<ThresholdSet> {
    let mut by_frs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (frs, s) in non_mated {
        by_frs.entry(frs.into()).or_default().push(s);
    }
    if by_frs.is_empty() {
        return Err(Error::Empty("non-mated scores"));
    }
    let mut thresholds = BTreeMap::new();
    for (frs, scores) in by_frs {
        let t = calibrate_threshold(&scores, target_fmr)?;
        thresholds.insert(frs, t);
    }
    Ok(ThresholdSet {
        target_fmr,
        thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn uniform_thousand() {
        let scores: Vec<f64> = (0..1000).map(f64::from).collect();
        let t = calibrate_threshold(&scores, 0.001).unwrap();
        assert_eq!(t, 999.0);
        assert_eq!(false_match_rate(&scores, t), 0.001);
    }

    #[test]
    fn constant_scores_give_infinity() {
        let scores = vec![0.5; 500];
        let t = calibrate_threshold(&scores, 0.001).unwrap();
        assert_eq!(t, f64::INFINITY);
        assert_eq!(false_match_rate(&scores, t), 0.0);
    }

    #[test]
    fn ties_at_the_boundary_push_threshold_up() {
        // 10 scores, target 0.2 => at most 2 matches; the top value appears 3 times.
        let scores = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 9.0, 9.0, 9.0];
        assert_eq!(calibrate_threshold(&scores, 0.2).unwrap(), f64::INFINITY);
        let scores = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 9.0];
        assert_eq!(calibrate_threshold(&scores, 0.2).unwrap(), 9.0);
        assert_eq!(calibrate_threshold(&scores, 0.3).unwrap(), 8.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(calibrate_threshold(&[], 0.1), Err(Error::Empty(_))));
        assert!(calibrate_threshold(&[1.0], 0.0).is_err());
        assert!(calibrate_threshold(&[1.0], 1.0).is_err());
        assert!(calibrate_threshold(&[f64::NAN], 0.5).is_err());
    }

    #[test]
    fn per_frs() {
        let set = calibrate_thresholds([("a", 1.0), ("a", 2.0), ("b", 5.0), ("b", 3.0)], 0.5).unwrap();
        assert_eq!(set.get("a").unwrap(), 2.0);
        assert_eq!(set.get("b").unwrap(), 5.0);
        assert!(set.get("c").is_err());
    }
}
