//! Dense linear operators shared by the solvers and the analysis code.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense real matrix with finite entries and at least one row and column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DenseOperator(DMatrix<f64>);

impl DenseOperator {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::input(format!(
                "operator must be non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if let Some(bad) = entries.iter().find(|v| !v.is_finite()) {
            return Err(Error::input(format!("operator has non-finite entry {bad}")));
        }
        Ok(Self(entries))
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, n))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        Self::new(&self.0 * c)
    }

    /// `A w`. Zero entries of `w` are skipped, which makes products with
    /// sparse primal iterates cheap.
    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(w.len(), self.cols());
        let mut out = DVector::zeros(self.rows());
        for (j, &wj) in w.iter().enumerate() {
            if wj != 0.0 {
                out.axpy(wj, &self.0.column(j), 1.0);
            }
        }
        out
    }

    /// `Aᵀ v`.
    pub fn apply_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(v.len(), self.rows());
        self.0.tr_mul(v)
    }

    /// Largest singular value, from a full SVD.
    pub fn spectral_norm(&self) -> f64 {
        spectral_norm(&self.0)
    }
}

impl TryFrom<Vec<Vec<f64>>> for DenseOperator {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::input("ragged operator rows"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::from_row_slice(nrows, ncols, &flat)
    }
}

impl From<DenseOperator> for Vec<Vec<f64>> {
    fn from(op: DenseOperator) -> Self {
        matrix_rows(&op.0)
    }
}

/// Serializes a vector as a flat JSON array.
pub(crate) mod flat_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Vec::<f64>::deserialize(d).map(DVector::from_vec)
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Largest singular value of an arbitrary dense matrix.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// The `(p-1) x p` forward-difference matrix with `-1` on the diagonal and
/// `+1` on the super-diagonal.
pub fn diff_operator(p: usize) -> Result<DenseOperator> {
    if p < 2 {
        return Err(Error::input(format!("difference operator needs p >= 2, got {p}")));
    }
    let mut d = DMatrix::zeros(p - 1, p);
    for i in 0..p - 1 {
        d[(i, i)] = -1.0;
        d[(i, i + 1)] = 1.0;
    }
    DenseOperator::new(d)
}

/// A `rows x cols` 0-1 mask with exactly `round(density * rows * cols)` ones
/// at positions drawn from a seeded generator.
pub fn mask_operator(rows: usize, cols: usize, density: f64, seed: u64) -> Result<DenseOperator> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::input(format!("mask density must be in (0, 1], got {density}")));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::input("mask must be non-empty"));
    }
    let total = rows * cols;
    let ones = ((density * total as f64).round() as usize).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = DMatrix::zeros(rows, cols);
    for flat in index::sample(&mut rng, total, ones) {
        mask[(flat / cols, flat % cols)] = 1.0;
    }
    DenseOperator::new(mask)
}

/// Embeds an entrywise mask as a diagonal operator on row-major vectorized
/// matrices.
pub fn mask_as_diagonal(mask: &DenseOperator) -> DenseOperator {
    let flat: Vec<f64> = mask.0.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
    DenseOperator(DMatrix::from_diagonal(&DVector::from_vec(flat)))
}

/// Row-major reshape of a vector into a `rows x cols` matrix.
pub fn reshape(w: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, w.as_slice())
}

/// Row-major vectorization, inverse of [`reshape`].
pub fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
}
