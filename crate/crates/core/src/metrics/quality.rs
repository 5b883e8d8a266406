//! Aggregation of per-image quality scores into `mean±std` report cells.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (divisor `N − 1`); zero for a single value.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    libm::sqrt(ss / (values.len() - 1) as f64)
}

/// Two-decimal `mean±std` cell text, e.g. `85.40±8.30`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2}±{std:.2}")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub method: String,
    pub dataset: String,
    pub metric: String,
}

impl CellKey {
    pub fn new(method: impl Into<String>, dataset: impl Into<String>, metric: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            dataset: dataset.into(),
            metric: metric.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl CellStats {
    pub fn formatted(&self) -> String {
        format_mean_std(self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QualityReport {
    pub cells: BTreeMap<CellKey, CellStats>,
    /// Raw score vectors, kept for distribution plots.
    pub raw: BTreeMap<CellKey, Vec<f64>>,
}

impl QualityReport {
    pub fn methods(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.cells.keys().map(|k| k.method.as_str()).collect();
        v.dedup();
        v
    }

    /// Distinct (dataset, metric) columns in sorted order.
    pub fn columns(&self) -> Vec<(&str, &str)> {
        let mut v: Vec<(&str, &str)> = self
            .cells
            .keys()
            .map(|k| (k.dataset.as_str(), k.metric.as_str()))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn metrics(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.cells.keys().map(|k| k.metric.as_str()).collect();
        v.sort();
        v.dedup();
        v
    }
}

pub fn aggregate_report(vectors: BTreeMap<CellKey, Vec<f64>>) -> Result<QualityReport> {
    if vectors.is_empty() {
        return Err(Error::Empty("quality score vectors"));
    }
    let mut cells = BTreeMap::new();
    for (key, values) in &vectors {
        if values.is_empty() {
            return Err(Error::Empty("quality score vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quality score vector"));
        }
        cells.insert(
            key.clone(),
            CellStats {
                mean: mean(values),
                std: sample_std(values),
                count: values.len(),
            },
        );
    }
    Ok(QualityReport { cells, raw: vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn one_two_three() {
        assert_eq!(format_mean_std(mean(&[1.0, 2.0, 3.0]), sample_std(&[1.0, 2.0, 3.0])), "2.00±1.00");
    }

    #[test]
    fn single_value_has_zero_std() {
        assert_eq!(format_mean_std(mean(&[4.256]), sample_std(&[4.256])), "4.26±0.00");
    }

    #[test]
    fn table_style() {
        assert_eq!(format_mean_std(85.4, 8.3), "85.40±8.30");
        assert_eq!(format_mean_std(96.5, 8.85), "96.50±8.85");
    }

    #[test]
    fn aggregate() {
        let mut v = BTreeMap::new();
        v.insert(CellKey::new("m", "FRLL", "sharpness"), vec![1.0, 2.0, 3.0]);
        v.insert(CellKey::new("m", "FRGC", "sharpness"), vec![10.0]);
        let r = aggregate_report(v).unwrap();
        assert_eq!(r.cells[&CellKey::new("m", "FRLL", "sharpness")].formatted(), "2.00±1.00");
        assert_eq!(r.columns(), vec![("FRGC", "sharpness"), ("FRLL", "sharpness")]);
        assert_eq!(r.methods(), vec!["m"]);
    }

    #[test]
    fn empty_inputs() {
        assert!(aggregate_report(BTreeMap::new()).is_err());
        let mut v = BTreeMap::new();
        v.insert(CellKey::new("m", "d", "x"), vec![]);
        assert!(aggregate_report(v).is_err());
    }
}
