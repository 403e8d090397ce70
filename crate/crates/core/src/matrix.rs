use serde::{Deserialize, Serialize};

/// Row-major matrix of sample points, one row per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "sample dimension must be positive");
        Self { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        assert!(dim >= 1, "sample dimension must be positive");
        Self {
            dim,
            data: Vec::with_capacity(dim * rows),
        }
    }

    /// Builds a matrix from row-major data. Panics if the length is not a
    /// multiple of `dim`.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim >= 1 && data.len().is_multiple_of(dim), "ragged sample matrix");
        Self { dim, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: impl IntoIterator<Item = R>) -> Self {
        let mut m = Self::new(dim);
        for r in rows {
            m.push(r.as_ref());
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "row dimension mismatch");
        self.data.extend_from_slice(row);
    }

    pub fn extend(&mut self, other: &SampleMatrix) {
        assert_eq!(other.dim, self.dim, "row dimension mismatch");
        self.data.extend_from_slice(&other.data);
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> SampleMatrix {
        let mut out = SampleMatrix::with_capacity(self.dim, indices.len());
        for &i in indices {
            out.push(self.row(i));
        }
        out
    }
}
