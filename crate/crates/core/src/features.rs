use serde::{Deserialize, Serialize};

use crate::error::{ensure, input, Result};

/// Row-major `n x d` matrix of feature vectors, one sample per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        ensure(dim >= 1, || "feature dimension must be at least 1".into())?;
        ensure(data.len() == rows * dim, || {
            format!("expected {} values for a {rows}x{dim} matrix, got {}", rows * dim, data.len())
        })?;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return input(format!("non-finite feature value at row {}, column {}", pos / dim, pos % dim));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return input("feature matrix needs at least one row to infer its dimension");
        };
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            ensure(r.len() == dim, || format!("row {i} has {} columns, expected {dim}", r.len()))?;
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    /// One-dimensional samples.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Stacks `self` on top of itself `times` times.
    pub fn repeated(&self, times: usize) -> Self {
        let mut data = Vec::with_capacity(self.data.len() * times);
        for _ in 0..times {
            data.extend_from_slice(&self.data);
        }
        Self { rows: self.rows * times, dim: self.dim, data }
    }
}
