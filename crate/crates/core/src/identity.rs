//! Identity matrices: one face embedding per source image.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::slerp::{norm, slerp};

/// An `n × d` matrix of face embeddings for one subject, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityMatrix {
    subject_id: String,
    source_image_ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
}

impl IdentityMatrix {
    pub fn from_rows(
        subject_id: impl Into<String>,
        source_image_ids: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::Empty("identity matrix"))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (index, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Row {
                    index,
                    source: Box::new(Error::DimensionMismatch {
                        what: "embedding",
                        expected: dim,
                        found: row.len(),
                    }),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(subject_id, source_image_ids, dim, data)
    }

    pub fn from_row_major(
        subject_id: impl Into<String>,
        source_image_ids: Vec<String>,
        dim: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let n = source_image_ids.len();
        if n == 0 || dim == 0 {
            return Err(Error::Empty("identity matrix"));
        }
        if data.len() != n * dim {
            return Err(Error::DimensionMismatch {
                what: "identity matrix data",
                expected: n * dim,
                found: data.len(),
            });
        }
        for (index, row) in data.chunks_exact(dim).enumerate() {
            let bad = if row.iter().any(|v| !v.is_finite()) {
                Some(Error::NonFinite("embedding"))
            } else if norm(row) == 0.0 {
                Some(Error::ZeroNorm("embedding"))
            } else {
                None
            };
            if let Some(e) = bad {
                return Err(Error::Row {
                    index,
                    source: Box::new(e),
                });
            }
        }
        Ok(Self {
            subject_id: subject_id.into(),
            source_image_ids,
            dim,
            data,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn source_image_ids(&self) -> &[String] {
        &self.source_image_ids
    }

    /// Number of rows (source images).
    pub fn n(&self) -> usize {
        self.source_image_ids.len()
    }

    /// Embedding dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    /// Keeps only the first `n` rows.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n() {
            return Err(Error::InvalidParameter {
                name: "row count",
                value: n as f64,
            });
        }
        Ok(Self {
            subject_id: self.subject_id.clone(),
            source_image_ids: self.source_image_ids[..n].to_vec(),
            dim: self.dim,
            data: self.data[..n * self.dim].to_vec(),
        })
    }
}

/// Merges two identities row by row: row `i` of the result is
/// `slerp(e1[i], e2[i], lambda)`. Rows are paired positionally.
pub fn merge_identities(
    e1: &IdentityMatrix,
    e2: &IdentityMatrix,
    lambda: f64,
    subject_id: &str,
) -> Result<IdentityMatrix> {
    if e1.n() != e2.n() {
        return Err(Error::DimensionMismatch {
            what: "identity row count",
            expected: e1.n(),
            found: e2.n(),
        });
    }
    if e1.dim() != e2.dim() {
        return Err(Error::DimensionMismatch {
            what: "identity embedding dimension",
            expected: e1.dim(),
            found: e2.dim(),
        });
    }
    let mut data = Vec::with_capacity(e1.data.len());
    for (index, (a, b)) in e1.rows().zip(e2.rows()).enumerate() {
        let row = slerp(a, b, lambda).map_err(|e| Error::Row {
            index,
            source: Box::new(e),
        })?;
        data.extend_from_slice(&row);
    }
    let sources = e1
        .source_image_ids
        .iter()
        .zip(&e2.source_image_ids)
        .map(|(a, b)| format!("{a}+{b}"))
        .collect();
    IdentityMatrix::from_row_major(subject_id, sources, e1.dim, data)
}

/// Mean of the rows, re-normalized to unit length. Used as the single
/// per-subject vector when ranking candidate pairs.
pub fn representative_embedding(identity: &IdentityMatrix) -> Result<Vec<f64>> {
    let mut mean = alloc::vec![0.0; identity.dim()];
    for row in identity.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let len = norm(&mean);
    if len == 0.0 {
        return Err(Error::ZeroNorm("mean embedding"));
    }
    mean.iter_mut().for_each(|m| *m /= len);
    Ok(mean)
}
