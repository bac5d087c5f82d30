//! LU factorization with partial pivoting and the 1-norm condition number.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Condition numbers above this are treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct Lu {
    factors: Matrix,
    pivots: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        a.expect_shape("LU input", n, n)?;
        let mut f = a.clone();
        let mut pivots: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n).fold(k, |best, i| {
                if f[(i, k)].abs() > f[(best, k)].abs() {
                    i
                } else {
                    best
                }
            });
            if f[(p, k)] == 0.0 {
                return Err(Error::Singular {
                    condition: f64::INFINITY,
                });
            }
            if p != k {
                for j in 0..n {
                    let tmp = f[(k, j)];
                    f[(k, j)] = f[(p, j)];
                    f[(p, j)] = tmp;
                }
                pivots.swap(k, p);
            }
            let pivot = f[(k, k)];
            for i in k + 1..n {
                let l = f[(i, k)] / pivot;
                f[(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..n {
                        f[(i, j)] -= l * f[(k, j)];
                    }
                }
            }
        }
        Ok(Self { factors: f, pivots })
    }

    fn n(&self) -> usize {
        self.factors.rows()
    }

    /// Solves `A · out = rhs` column by column.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        let n = self.n();
        rhs.expect_shape("LU right-hand side", n, rhs.cols())?;
        let f = &self.factors;
        let mut out = rhs.select_rows(&self.pivots);
        for c in 0..rhs.cols() {
            for i in 0..n {
                let mut s = out[(i, c)];
                for k in 0..i {
                    s -= f[(i, k)] * out[(k, c)];
                }
                out[(i, c)] = s;
            }
            for i in (0..n).rev() {
                let mut s = out[(i, c)];
                for k in i + 1..n {
                    s -= f[(i, k)] * out[(k, c)];
                }
                out[(i, c)] = s / f[(i, i)];
            }
        }
        Ok(out)
    }

    /// `‖A⁻¹‖₁` from the factored inverse. Sampling estimators can miss
    /// the null direction of a numerically singular matrix entirely.
    fn inverse_norm1(&self) -> f64 {
        let inv = self.solve(&Matrix::identity(self.n())).unwrap();
        norm1(&inv)
    }
}

pub fn norm1(a: &Matrix) -> f64 {
    (0..a.cols())
        .map(|j| (0..a.rows()).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Factors `a` and rejects it when the 1-norm condition number exceeds
/// [`SINGULAR_CONDITION`] or is not finite.
pub fn factor_well_conditioned(a: &Matrix) -> Result<(Lu, f64)> {
    let lu = Lu::factor(a)?;
    let condition = norm1(a) * lu.inverse_norm1();
    if !(condition <= SINGULAR_CONDITION) {
        return Err(Error::Singular { condition });
    }
    Ok((lu, condition))
}

/// One step of iterative refinement on top of a direct solve.
pub fn solve_refined(a: &Matrix, lu: &Lu, rhs: &Matrix) -> Result<Matrix> {
    let mut x = lu.solve(rhs)?;
    let residual = rhs.sub(&a.matmul(&x)?)?;
    x.add_scaled(1.0, &lu.solve(&residual)?);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn solves_small_system() {
        let a = Matrix::from_vec(3, 3, vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0]).unwrap();
        let b = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let (lu, cond) = factor_well_conditioned(&a).unwrap();
        assert!(cond.is_finite());
        let x = lu.solve(&b).unwrap();
        assert!(a.matmul(&x).unwrap().sub(&b).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn condition_is_exact_for_a_diagonal() {
        let a = Matrix::from_vec(2, 2, vec![4.0, 0.0, 0.0, 0.5]).unwrap();
        assert_eq!(factor_well_conditioned(&a).unwrap().1, 8.0);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = Matrix::from_vec(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(
            factor_well_conditioned(&a),
            Err(Error::Singular { .. })
        ));
    }
}
