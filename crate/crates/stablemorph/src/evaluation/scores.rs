//! Comparison score files and MAP outputs.
//!
//! A score file is tab-separated with the header
//! `kind  morph_id  subject_role  frs_id  attempt  score`. `kind` is
//! `mated` or `non-mated`; non-mated rows leave the morph, role and
//! attempt columns as `-`.

use std::path::Path;

use serde_json::json;
use stablemorph_core::metrics::{
    attempt_match_counts, calibrate_thresholds, compute_map, ComparisonScoreSet, MapMatrix, MapSemantics, MatedScore,
    NonMatedScore, ThresholdSet,
};

use super::tsv_rows;
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};

pub const SCORES_HEADER: [&str; 6] = ["kind", "morph_id", "subject_role", "frs_id", "attempt", "score"];

pub fn parse_scores(text: &str) -> Result<ComparisonScoreSet> {
    let mut mated = Vec::new();
    let mut non_mated = Vec::new();
    let mut rows = tsv_rows(text);
    match rows.next() {
        Some((_, cols)) if cols == SCORES_HEADER => {}
        Some((n, _)) => {
            return Err(Error::input(format!(
                "score file line {n}: expected header {}",
                SCORES_HEADER.join("\t")
            )))
        }
        None => return Err(Error::input("score file is empty")),
    }
    for (n, cols) in rows {
        let bad = |what: &str| Error::input(format!("score file line {n}: {what}"));
        if cols.len() != SCORES_HEADER.len() {
            return Err(bad(&format!("expected {} columns, found {}", SCORES_HEADER.len(), cols.len())));
        }
        let score: f64 = cols[5].parse().map_err(|_| bad(&format!("bad score {:?}", cols[5])))?;
        if !score.is_finite() {
            return Err(bad("score is not finite"));
        }
        let frs_id = cols[3].to_string();
        if frs_id.is_empty() {
            return Err(bad("empty frs_id"));
        }
        match cols[0] {
            "mated" => {
                let role = cols[2].parse().map_err(|_| bad(&format!("bad subject role {:?}", cols[2])))?;
                let attempt: u32 = cols[4]
                    .parse()
                    .ok()
                    .filter(|&a| a > 0)
                    .ok_or_else(|| bad(&format!("bad attempt {:?}", cols[4])))?;
                mated.push(MatedScore {
                    morph_id: cols[1].to_string(),
                    role,
                    frs_id,
                    attempt,
                    score,
                });
            }
            "non-mated" => non_mated.push(NonMatedScore { frs_id, score }),
            other => return Err(bad(&format!("unknown kind {other:?}"))),
        }
    }
    if mated.is_empty() {
        return Err(Error::input("score file has no mated scores"));
    }
    Ok(ComparisonScoreSet::from_records(mated, non_mated))
}

pub fn read_scores(path: &Path) -> Result<ComparisonScoreSet> {
    parse_scores(&read_to_string(path)?).map_err(|e| match e {
        Error::Input(m) => Error::Input(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn scores_to_tsv(set: &ComparisonScoreSet) -> String {
    let mut out = SCORES_HEADER.join("\t");
    out.push('\n');
    for m in &set.mated {
        out.push_str(&format!(
            "mated\t{}\t{}\t{}\t{}\t{}\n",
            m.morph_id,
            m.role.as_char(),
            m.frs_id,
            m.attempt,
            m.score
        ));
    }
    for m in &set.non_mated {
        out.push_str(&format!("non-mated\t-\t-\t{}\t-\t{}\n", m.frs_id, m.score));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub thresholds: ThresholdSet,
    pub matrix: MapMatrix,
    pub semantics: MapSemantics,
    pub frs_ids: Vec<String>,
}

/// Calibrates thresholds on the non-mated scores and builds the MAP matrix.
pub fn evaluate_map(set: &ComparisonScoreSet, target_fmr: f64, semantics: MapSemantics) -> Result<MapResult> {
    let thresholds = calibrate_thresholds(set.non_mated_pairs(), target_fmr)?;
    for (frs, t) in &thresholds.thresholds {
        if t.is_infinite() {
            log::warn!("{frs}: too few non-mated scores for FMR {target_fmr}; threshold is +inf");
        }
    }
    let counts = attempt_match_counts(set, &thresholds, semantics)?;
    let frs_ids = set.frs_ids();
    let matrix = compute_map(&counts, set.attempts, &frs_ids, set.morph_ids().len())?;
    Ok(MapResult {
        thresholds,
        matrix,
        semantics,
        frs_ids,
    })
}

pub fn map_to_tsv(matrix: &MapMatrix) -> String {
    format!("{matrix}\n")
}

/// Machine-readable MAP record. Infinite thresholds become `null`.
pub fn map_to_json(result: &MapResult, config_hash: &str) -> serde_json::Value {
    let thresholds: serde_json::Map<String, serde_json::Value> = result
        .thresholds
        .thresholds
        .iter()
        .map(|(k, v)| (k.clone(), if v.is_finite() { json!(v) } else { serde_json::Value::Null }))
        .collect();
    let rows: Vec<&[f64]> = (1..=result.matrix.attempts as usize).map(|r| result.matrix.row(r)).collect();
    json!({
        "target_fmr": result.thresholds.target_fmr,
        "thresholds": thresholds,
        "frs_ids": result.frs_ids,
        "attempts": result.matrix.attempts,
        "morph_count": result.matrix.morph_count,
        "semantics": result.semantics.as_str(),
        "map": rows,
        "config_hash": config_hash,
    })
}

/// Writes `map.tsv` and `map.json` into `dir`.
pub fn write_map(dir: &Path, result: &MapResult, config_hash: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join("map.tsv"), map_to_tsv(&result.matrix).as_bytes())?;
    let json = serde_json::to_string_pretty(&map_to_json(result, config_hash)).expect("json");
    write_atomic(&dir.join("map.json"), json.as_bytes())
}

/// Reads a MAP table written by [`map_to_tsv`]: column labels and rows.
pub fn parse_map_tsv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rows = tsv_rows(text);
    let (_, header) = rows.next().ok_or_else(|| Error::input("MAP table is empty"))?;
    let cols: Vec<String> = header.iter().skip(1).map(|s| s.to_string()).collect();
    let mut out = Vec::new();
    for (n, r) in rows {
        if r.len() != cols.len() + 1 {
            return Err(Error::input(format!("MAP table line {n}: expected {} columns", cols.len() + 1)));
        }
        let vals = r[1..]
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Error::input(format!("MAP table line {n}: bad value")))?;
        out.push(vals);
    }
    if out.is_empty() {
        return Err(Error::input("MAP table has no rows"));
    }
    Ok((cols, out))
}
