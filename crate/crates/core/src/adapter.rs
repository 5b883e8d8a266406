//! Low-rank adapter weight maps and their affine merge.
//!
//! Weights are merged key by key on the stored factor tensors, never on
//! composed deltas.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "float32",
            DType::F64 => "float64",
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "float32" => Some(DType::F32),
            "float64" => Some(DType::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl WeightData {
    pub fn len(&self) -> usize {
        match self {
            WeightData::F32(v) => v.len(),
            WeightData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            WeightData::F32(_) => DType::F32,
            WeightData::F64(_) => DType::F64,
        }
    }

    /// Element `i` widened to `f64`.
    pub fn get(&self, i: usize) -> f64 {
        match self {
            WeightData::F32(v) => f64::from(v[i]),
            WeightData::F64(v) => v[i],
        }
    }

    pub fn iter_f64(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }
}

/// A dense array with an immutable recorded shape.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightArray {
    shape: Vec<usize>,
    data: WeightData,
}

impl WeightArray {
    pub fn new(shape: Vec<usize>, data: WeightData) -> Result<Self> {
        let elements: usize = shape.iter().product();
        if elements != data.len() || shape.is_empty() {
            return Err(Error::BadShape {
                key: String::new(),
                elements: data.len(),
                shape,
            });
        }
        let finite = match &data {
            WeightData::F32(v) => v.iter().all(|x| x.is_finite()),
            WeightData::F64(v) => v.iter().all(|x| x.is_finite()),
        };
        if !finite {
            return Err(Error::NonFinite("adapter weights"));
        }
        Ok(Self { shape, data })
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, WeightData::F32(data))
    }

    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, WeightData::F64(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &WeightData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }
}

/// Where an adapter map came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    FineTuned {
        image_ids: Vec<String>,
        steps: u32,
        seed: u64,
    },
    Merged {
        parent_a: String,
        parent_b: String,
        alpha: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterWeightMap {
    subject_id: String,
    entries: BTreeMap<String, WeightArray>,
    provenance: Provenance,
}

impl AdapterWeightMap {
    pub fn new(
        subject_id: impl Into<String>,
        entries: BTreeMap<String, WeightArray>,
        provenance: Provenance,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("adapter key set"));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            entries,
            provenance,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn entries(&self) -> &BTreeMap<String, WeightArray> {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&WeightArray> {
        self.entries.get(key)
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Returns `alpha · w1 + (1 − alpha) · w2`, key-wise and element-wise.
///
/// Arithmetic is carried out in `f64` and the merged arrays are stored as
/// `f64` regardless of the parents' dtype, so `alpha = 1` and `alpha = 0`
/// reproduce the parents' values exactly.
pub fn merge_adapters(
    w1: &AdapterWeightMap,
    w2: &AdapterWeightMap,
    alpha: f64,
    subject_id: &str,
) -> Result<AdapterWeightMap> {
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter {
            name: "alpha",
            value: alpha,
        });
    }
    let difference: Vec<String> = w1
        .entries
        .keys()
        .filter(|k| !w2.entries.contains_key(*k))
        .chain(w2.entries.keys().filter(|k| !w1.entries.contains_key(*k)))
        .cloned()
        .collect();
    if !difference.is_empty() {
        let mut difference = difference;
        difference.sort();
        return Err(Error::KeyMismatch(difference));
    }

    let beta = 1.0 - alpha;
    let mut entries = BTreeMap::new();
    for (key, a) in &w1.entries {
        let b = &w2.entries[key];
        if a.shape != b.shape {
            return Err(Error::ShapeMismatch { key: key.clone() });
        }
        let data: Vec<f64> = a
            .data
            .iter_f64()
            .zip(b.data.iter_f64())
            .map(|(x, y)| blend(x, y, alpha, beta))
            .collect();
        entries.insert(
            key.clone(),
            WeightArray {
                shape: a.shape.clone(),
                data: WeightData::F64(data),
            },
        );
    }
    AdapterWeightMap::new(
        subject_id,
        entries,
        Provenance::Merged {
            parent_a: w1.subject_id.clone(),
            parent_b: w2.subject_id.clone(),
            alpha,
        },
    )
}

#[inline]
fn blend(x: f64, y: f64, alpha: f64, beta: f64) -> f64 {
    // Exact at the endpoints and on equal operands.
    if x == y || alpha == 1.0 {
        x
    } else if alpha == 0.0 {
        y
    } else {
        alpha * x + beta * y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn single(key: &str, shape: Vec<usize>, data: Vec<f64>) -> AdapterWeightMap {
        let mut e = BTreeMap::new();
        e.insert(key.to_string(), WeightArray::f64(shape, data).unwrap());
        AdapterWeightMap::new(
            "s",
            e,
            Provenance::FineTuned {
                image_ids: vec![],
                steps: 1,
                seed: 0,
            },
        )
        .unwrap()
    }

    #[test]
    fn two_by_two_example() {
        let w1 = single("k", vec![2, 2], vec![2.0, 0.0, 0.0, 2.0]);
        let w2 = single("k", vec![2, 2], vec![0.0, 4.0, 4.0, 0.0]);
        let m = merge_adapters(&w1, &w2, 0.5, "m").unwrap();
        let got: Vec<f64> = m.get("k").unwrap().data().iter_f64().collect();
        assert_eq!(got, vec![1.0, 2.0, 2.0, 1.0]);
        assert_eq!(
            m.provenance(),
            &Provenance::Merged {
                parent_a: "s".into(),
                parent_b: "s".into(),
                alpha: 0.5
            }
        );
    }

    #[test]
    fn key_mismatch_lists_symmetric_difference() {
        let w1 = single("a", vec![1], vec![1.0]);
        let w2 = single("b", vec![1], vec![1.0]);
        assert_eq!(
            merge_adapters(&w1, &w2, 0.5, "m"),
            Err(Error::KeyMismatch(vec!["a".into(), "b".into()]))
        );
    }

    #[test]
    fn shape_mismatch_names_key() {
        let w1 = single("k", vec![2], vec![1.0, 2.0]);
        let w2 = single("k", vec![1, 2], vec![1.0, 2.0]);
        assert_eq!(
            merge_adapters(&w1, &w2, 0.5, "m"),
            Err(Error::ShapeMismatch { key: "k".into() })
        );
    }

    #[test]
    fn f32_parents_merge_in_f64() {
        let mut e = BTreeMap::new();
        e.insert("k".to_string(), WeightArray::f32(vec![2], vec![0.1, 3.0]).unwrap());
        let w = AdapterWeightMap::new(
            "s",
            e,
            Provenance::FineTuned {
                image_ids: vec![],
                steps: 1,
                seed: 0,
            },
        )
        .unwrap();
        let m = merge_adapters(&w, &w, 0.5, "m").unwrap();
        let arr = m.get("k").unwrap();
        assert_eq!(arr.dtype(), DType::F64);
        assert_eq!(arr.data().get(0), f64::from(0.1f32));
    }

    #[test]
    fn shape_validation() {
        assert!(WeightArray::f64(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(WeightArray::f32(vec![1], vec![f32::NAN]).is_err());
        assert!(AdapterWeightMap::new(
            "s",
            BTreeMap::new(),
            Provenance::FineTuned {
                image_ids: vec![],
                steps: 0,
                seed: 0
            }
        )
        .is_err());
    }
}
