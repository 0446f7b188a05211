//! Small dense symmetric matrices and their Cholesky factors.

use crate::error::{invalid, Error, Result};

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("matrix rows must form a square"));
        }
        Ok(Self {
            dim,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.dim).all(|i| {
            (0..i).all(|j| {
                let (a, b) = (self[(i, j)], self[(j, i)]);
                (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
            })
        })
    }

    pub fn matmul(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.dim, other.dim);
        SquareMatrix::from_fn(self.dim, |i, j| {
            (0..self.dim).map(|k| self[(i, k)] * other[(k, j)]).sum()
        })
    }

    pub fn transpose(&self) -> SquareMatrix {
        SquareMatrix::from_fn(self.dim, |i, j| self[(j, i)])
    }

    /// Symmetric permutation `P A Pᵀ`, row/column `i` of the result is `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> SquareMatrix {
        SquareMatrix::from_fn(self.dim, |i, j| self[(order[i], order[j])])
    }

    /// Inverse through Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<SquareMatrix> {
        let n = self.dim;
        let mut a = self.clone();
        let mut inv = SquareMatrix::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[(x, col)].abs().total_cmp(&a[(y, col)].abs()))
                .unwrap_or(col);
            if a[(pivot, col)].abs() < 1e-300 {
                return Err(Error::InvalidData("singular matrix".into()));
            }
            for j in 0..n {
                a.data.swap(col * n + j, pivot * n + j);
                inv.data.swap(col * n + j, pivot * n + j);
            }
            let d = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= d;
                inv[(col, j)] /= d;
            }
            for row in 0..n {
                if row != col {
                    let f = a[(row, col)];
                    if f != 0.0 {
                        for j in 0..n {
                            a[(row, j)] -= f * a[(col, j)];
                            inv[(row, j)] -= f * inv[(col, j)];
                        }
                    }
                }
            }
        }
        Ok(inv)
    }

    pub fn max_abs_diff(&self, other: &SquareMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SquareMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }
}

/// Lower Cholesky factor `L` with `L Lᵀ = sigma`.
///
/// Fails with the index of the first non-positive pivot.
pub fn cholesky(sigma: &SquareMatrix) -> Result<SquareMatrix> {
    let n = sigma.dim();
    if !sigma.is_symmetric(1e-12) {
        return Err(invalid("covariance matrix is not symmetric"));
    }
    let mut l = SquareMatrix::zeros(n);
    for j in 0..n {
        let mut d = sigma[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = sigma[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}
