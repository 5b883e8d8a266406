//! Evaluation metrics.

pub mod frechet;
pub mod map;
pub mod quality;
pub mod threshold;

pub use frechet::{frechet_between, frechet_distance, moments_from_features, Moments};
pub use map::{
    attempt_match_counts, compute_map, AttemptCounts, ComparisonScoreSet, MapMatrix, MapSemantics, MatedScore,
    NonMatedScore, SubjectRole,
};
pub use quality::{aggregate_report, format_mean_std, mean, sample_std, CellKey, CellStats, QualityReport};
pub use threshold::{calibrate_threshold, calibrate_thresholds, false_match_rate, ThresholdSet};
