//! Compressed sparse row matrices and the propagation operator abstraction.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{axpy, Matrix};

/// Square or rectangular sparse matrix in CSR layout. Column indices within
/// a row are strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < rows && c < cols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn mul_dense(&self, rhs: &Matrix) -> Result<Matrix> {
        if rhs.rows() != self.cols {
            return Err(Error::Dimension {
                context: "sparse matmul",
                expected: (self.cols, rhs.cols()),
                found: rhs.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols());
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                let src = rhs.row(j);
                axpy(out.row_mut(i), v, src);
            }
        }
        Ok(out)
    }

    pub fn t_mul_dense(&self, rhs: &Matrix) -> Result<Matrix> {
        if rhs.rows() != self.rows {
            return Err(Error::Dimension {
                context: "transposed sparse matmul",
                expected: (self.rows, rhs.cols()),
                found: rhs.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols());
        for i in 0..self.rows {
            let src = rhs.row(i);
            for (j, v) in self.row(i) {
                axpy(out.row_mut(j), v, src);
            }
        }
        Ok(out)
    }
}

/// A propagation operator: anything that can be applied to (and, transposed,
/// pulled back through) a dense node-by-channel matrix.
pub trait Propagator {
    fn shape(&self) -> (usize, usize);
    fn apply(&self, rhs: &Matrix) -> Result<Matrix>;
    fn apply_transposed(&self, rhs: &Matrix) -> Result<Matrix>;
}

impl Propagator for Csr {
    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn apply(&self, rhs: &Matrix) -> Result<Matrix> {
        self.mul_dense(rhs)
    }

    fn apply_transposed(&self, rhs: &Matrix) -> Result<Matrix> {
        self.t_mul_dense(rhs)
    }
}

impl Propagator for Matrix {
    fn shape(&self) -> (usize, usize) {
        Matrix::shape(self)
    }

    fn apply(&self, rhs: &Matrix) -> Result<Matrix> {
        self.matmul(rhs)
    }

    fn apply_transposed(&self, rhs: &Matrix) -> Result<Matrix> {
        self.t_matmul(rhs)
    }
}

/// A propagator that is either the sparse normalized graph or a dense,
/// possibly asymmetric and sign-unconstrained, perturbation of it.
#[derive(Clone, Debug, PartialEq)]
pub enum Adjacency {
    Sparse(Csr),
    Dense(Matrix),
}

impl Adjacency {
    pub fn num_nodes(&self) -> usize {
        match self {
            Adjacency::Sparse(s) => s.rows(),
            Adjacency::Dense(d) => d.rows(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Adjacency::Sparse(s) => s.get(i, j),
            Adjacency::Dense(d) => d[(i, j)],
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match self {
            Adjacency::Sparse(s) => s.to_dense(),
            Adjacency::Dense(d) => d.clone(),
        }
    }
}

impl Propagator for Adjacency {
    fn shape(&self) -> (usize, usize) {
        match self {
            Adjacency::Sparse(s) => Propagator::shape(s),
            Adjacency::Dense(d) => Propagator::shape(d),
        }
    }

    fn apply(&self, rhs: &Matrix) -> Result<Matrix> {
        match self {
            Adjacency::Sparse(s) => s.apply(rhs),
            Adjacency::Dense(d) => d.apply(rhs),
        }
    }

    fn apply_transposed(&self, rhs: &Matrix) -> Result<Matrix> {
        match self {
            Adjacency::Sparse(s) => s.apply_transposed(rhs),
            Adjacency::Dense(d) => d.apply_transposed(rhs),
        }
    }
}
