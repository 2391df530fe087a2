//! Compressed sparse rows and a sparse LU wrapper.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::MatMut;

use crate::error::{Error, Result};

/// Relative residual accepted from a linear solve.
pub const LINEAR_SOLVE_TOLERANCE: f64 = 1e-10;

/// Row-compressed matrix; duplicate entries are summed, explicit zeros kept.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = entries.to_vec();
        if let Some(&(r, c, _)) = sorted.iter().find(|(r, c, _)| *r >= nrows || *c >= ncols) {
            return Err(Error::DimensionMismatch {
                context: "sparse entry index",
                expected: if r >= nrows { nrows } else { ncols },
                found: if r >= nrows { r } else { c },
            });
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Structural pattern as `(row, col)` pairs in row-major order.
    pub fn pattern(&self) -> Vec<(usize, usize)> {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, _)| (i, j)))
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|(c, _)| *c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn transpose_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (i, yi) in y.iter().enumerate().take(self.nrows) {
            for (j, v) in self.row(i) {
                out[j] += v * yi;
            }
        }
        out
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        out
    }
}

/// LU factorization with partial pivoting.
pub struct LuFactor {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    matrix: SparseMatrix,
    row_norm: f64,
    col_norm: f64,
}

impl std::fmt::Debug for LuFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LuFactor").field("n", &self.matrix.nrows).finish()
    }
}

impl LuFactor {
    pub fn new(matrix: &SparseMatrix) -> Result<Self> {
        if matrix.nrows != matrix.ncols {
            return Err(Error::DimensionMismatch {
                context: "square matrix",
                expected: matrix.nrows,
                found: matrix.ncols,
            });
        }
        if matrix.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolve("matrix has non-finite entries".into()));
        }
        let triplets: Vec<Triplet<usize, usize, f64>> = (0..matrix.nrows)
            .flat_map(|i| matrix.row(i).map(move |(j, v)| Triplet::new(i, j, v)))
            .collect();
        let csc = SparseColMat::<usize, f64>::try_new_from_triplets(matrix.nrows, matrix.ncols, &triplets)
            .map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
        let lu = csc
            .sp_lu()
            .map_err(|e| Error::LinearSolve(format!("factorization failed: {e:?}")))?;
        let mut col_sums = vec![0.0; matrix.ncols];
        for i in 0..matrix.nrows {
            for (j, v) in matrix.row(i) {
                col_sums[j] += v.abs();
            }
        }
        Ok(Self {
            lu,
            matrix: matrix.clone(),
            row_norm: matrix.norm_inf(),
            col_norm: col_sums.into_iter().fold(0.0, f64::max),
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_checked(rhs, false)
    }

    /// Solves `A^T x = rhs`.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_checked(rhs, true)
    }

    fn raw(&self, rhs: &[f64], transpose: bool) -> Vec<f64> {
        let mut x = rhs.to_vec();
        let n = x.len();
        let view = MatMut::from_column_major_slice_mut(&mut x, n, 1);
        if transpose {
            self.lu.solve_transpose_in_place(view);
        } else {
            self.lu.solve_in_place(view);
        }
        x
    }

    fn residual(&self, x: &[f64], rhs: &[f64], transpose: bool) -> Vec<f64> {
        let ax = if transpose {
            self.matrix.transpose_mul_vec(x)
        } else {
            self.matrix.mul_vec(x)
        };
        ax.iter().zip(rhs).map(|(a, b)| a - b).collect()
    }

    fn solve_checked(&self, rhs: &[f64], transpose: bool) -> Result<Vec<f64>> {
        let n = self.matrix.nrows;
        if rhs.len() != n {
            return Err(Error::DimensionMismatch {
                context: "right-hand side",
                expected: n,
                found: rhs.len(),
            });
        }
        let norm_a = if transpose { self.col_norm } else { self.row_norm };
        let norm_b = inf_norm(rhs);
        let mut x = self.raw(rhs, transpose);
        // one refinement step absorbs pivoting noise on badly scaled rows
        for attempt in 0..2 {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::LinearSolve("matrix is singular".into()));
            }
            let r = self.residual(&x, rhs, transpose);
            let scale = norm_a * inf_norm(&x) + norm_b;
            if inf_norm(&r) <= LINEAR_SOLVE_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
                return Ok(x);
            }
            if attempt == 0 {
                let dx = self.raw(&r, transpose);
                for (xi, di) in x.iter_mut().zip(dx) {
                    *xi -= di;
                }
            }
        }
        Err(Error::LinearSolve("matrix is singular to working precision".into()))
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
