//! Small dense complex linear algebra: a row-major matrix and an
//! order-recursive QR factorization used by the greedy support search.

use crate::error::{Error, Result};
use crate::scalar::{czero, dot_conj, norm_sqr, Cplx, Real};

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat<T> {
    rows: usize,
    cols: usize,
    data: Vec<Cplx<T>>,
}

impl<T: Real> CMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![czero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Cplx<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<Cplx<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| {
            if r == c {
                Cplx::new(T::one(), T::zero())
            } else {
                czero()
            }
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Cplx<T> {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Cplx<T>) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: Cplx<T>) {
        self.data[r * self.cols + c] += v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[Cplx<T>] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<Cplx<T>> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// All columns, each as a contiguous vector.
    pub fn columns(&self) -> Vec<Vec<Cplx<T>>> {
        (0..self.cols).map(|c| self.column(c)).collect()
    }

    /// Submatrix made of the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            if r >= self.rows {
                return Err(Error::Index {
                    index: r,
                    bound: self.rows,
                });
            }
            data.extend_from_slice(self.row(r));
        }
        Ok(Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        })
    }

    /// Submatrix made of the given columns, in the given order.
    pub fn select_cols(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&c| c >= self.cols) {
            return Err(Error::Index {
                index: bad,
                bound: self.cols,
            });
        }
        Ok(Self::from_fn(self.rows, idx.len(), |r, k| self.get(r, idx[k])))
    }

    pub fn mul_vec(&self, x: &[Cplx<T>]) -> Result<Vec<Cplx<T>>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .fold(czero(), |acc, (a, b)| acc + a * b)
            })
            .collect())
    }

    /// `A^H y`
    pub fn adjoint_mul_vec(&self, y: &[Cplx<T>]) -> Result<Vec<Cplx<T>>> {
        if y.len() != self.rows {
            return Err(Error::Shape(format!(
                "vector of length {} against {} rows",
                y.len(),
                self.rows
            )));
        }
        let mut out = vec![czero(); self.cols];
        for (r, yr) in y.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a.conj() * yr;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                for c in 0..other.cols {
                    out.add_at(r, c, a * other.get(k, c));
                }
            }
        }
        Ok(out)
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r).conj())
    }

    pub fn trace(&self) -> Cplx<T> {
        (0..self.rows.min(self.cols)).fold(czero(), |acc, i| acc + self.get(i, i))
    }

    pub fn frobenius_norm(&self) -> T {
        norm_sqr(&self.data).sqrt()
    }

    pub fn sub(&self, other: &Self) -> Self {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Largest deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> T {
        let mut worst = T::zero();
        for r in 0..self.rows {
            for c in 0..self.cols {
                worst = worst.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    pub fn as_slice(&self) -> &[Cplx<T>] {
        &self.data
    }
}

/// Order-recursive thin QR of a growing set of columns, `A_S = Q R`.
///
/// Each appended column costs `O(K s)` for `s` columns already present. The
/// factorization also tracks the projection residual `P⊥_S y` of one
/// observation vector.
#[derive(Debug, Clone)]
pub struct IncrementalQr<T> {
    basis: Vec<Vec<Cplx<T>>>,
    /// Column-major upper triangle: `r_cols[j][i] = R(i, j)` for `i <= j`.
    r_cols: Vec<Vec<Cplx<T>>>,
    qhy: Vec<Cplx<T>>,
    residual: Vec<Cplx<T>>,
}

impl<T: Real> IncrementalQr<T> {
    pub fn new(y: &[Cplx<T>]) -> Self {
        Self {
            basis: Vec::new(),
            r_cols: Vec::new(),
            qhy: Vec::new(),
            residual: y.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// `P⊥_S y`
    pub fn residual(&self) -> &[Cplx<T>] {
        &self.residual
    }

    pub fn residual_norm_sqr(&self) -> T {
        norm_sqr(&self.residual)
    }

    /// Appends a column. Fails when the column's component orthogonal to the
    /// current span carries less than `rel_tol` of its energy.
    pub fn push(&mut self, a: &[Cplx<T>], rel_tol: T) -> Result<(), ()> {
        let energy = norm_sqr(a);
        if energy <= T::zero() {
            return Err(());
        }
        let mut v = a.to_vec();
        let mut coeffs = Vec::with_capacity(self.basis.len() + 1);
        // Two passes of modified Gram-Schmidt keep Q orthonormal to working precision.
        for _pass in 0..2 {
            for (k, q) in self.basis.iter().enumerate() {
                let c = dot_conj(q, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= qi * c;
                }
                if coeffs.len() <= k {
                    coeffs.push(c);
                } else {
                    coeffs[k] += c;
                }
            }
        }
        let rho2 = norm_sqr(&v);
        if !(rho2 > rel_tol * energy) {
            return Err(());
        }
        let rho = rho2.sqrt();
        for vi in v.iter_mut() {
            *vi = *vi / rho;
        }
        let proj = dot_conj(&v, &self.residual);
        for (ri, qi) in self.residual.iter_mut().zip(&v) {
            *ri -= qi * proj;
        }
        coeffs.push(Cplx::new(rho, T::zero()));
        self.qhy.push(proj);
        self.basis.push(v);
        self.r_cols.push(coeffs);
        Ok(())
    }

    /// Most recently appended orthonormal basis vector.
    pub fn last_basis(&self) -> Option<&[Cplx<T>]> {
        self.basis.last().map(|v| v.as_slice())
    }

    #[inline]
    fn r(&self, i: usize, j: usize) -> Cplx<T> {
        self.r_cols[j][i]
    }

    /// Least-squares coefficients `R^{-1} Q^H y`.
    pub fn solve(&self) -> Vec<Cplx<T>> {
        let s = self.len();
        let mut x = vec![czero(); s];
        for i in (0..s).rev() {
            let mut acc = self.qhy[i];
            for j in i + 1..s {
                acc -= self.r(i, j) * x[j];
            }
            x[i] = acc / self.r(i, i);
        }
        x
    }

    /// `(A_S^H A_S)^{-1} = R^{-1} R^{-H}`, row-major `s x s`.
    pub fn gram_inverse(&self) -> Vec<Cplx<T>> {
        let s = self.len();
        // Upper-triangular inverse of R, column by column.
        let mut rinv = vec![czero::<T>(); s * s];
        for j in 0..s {
            rinv[j * s + j] = Cplx::new(T::one(), T::zero()) / self.r(j, j);
            for i in (0..j).rev() {
                let mut acc = czero::<T>();
                for k in i + 1..=j {
                    acc += self.r(i, k) * rinv[k * s + j];
                }
                rinv[i * s + j] = -acc / self.r(i, i);
            }
        }
        let mut out = vec![czero(); s * s];
        for r in 0..s {
            for c in 0..s {
                let mut acc = czero();
                for k in r.max(c)..s {
                    acc += rinv[r * s + k] * rinv[c * s + k].conj();
                }
                out[r * s + c] = acc;
            }
        }
        out
    }
}
