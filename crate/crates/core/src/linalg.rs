//! Tiny dense symmetric solvers. Every system in this crate is at most a
//! handful of unknowns, so a row-major `Vec` and Cholesky are enough.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SymMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SymMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    /// Gram matrix `XᵀX` from rows of length `n`.
    pub fn gram<R: AsRef<[T]>>(rows: &[R], n: usize) -> Self {
        let mut m = Self::zeros(n);
        for row in rows {
            let r = row.as_ref();
            for i in 0..n {
                for j in i..n {
                    let v = m.get(i, j) + r[i] * r[j];
                    m.set(i, j, v);
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                let v = m.get(j, i);
                m.set(i, j, v);
            }
        }
        m
    }

    /// Principal submatrix on `idx`.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut m = Self::zeros(idx.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                m.set(a, b, self.get(i, j));
            }
        }
        m
    }

    /// Cholesky factor `L` (lower, row-major) of this matrix after scaling to
    /// unit diagonal. Returns `None` when a scaled pivot drops below `tol`,
    /// i.e. the matrix is numerically singular.
    fn scaled_cholesky(&self, tol: T) -> Option<(Vec<T>, Vec<T>)> {
        let n = self.n;
        let mut scale = vec![T::one(); n];
        for (i, s) in scale.iter_mut().enumerate() {
            let d = self.get(i, i);
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            *s = d.sqrt();
        }
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self.get(i, j) / (scale[i] * scale[j]);
                for k in 0..j {
                    sum = sum - l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > tol) {
                        return None;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some((l, scale))
    }

    /// Solves `A x = b` for symmetric positive definite `A`.
    pub fn solve(&self, b: &[T], tol: T) -> Option<Vec<T>> {
        let n = self.n;
        let (l, scale) = self.scaled_cholesky(tol)?;
        // (D L Lᵀ D) x = b  ->  L Lᵀ (D x) = D⁻¹ b
        let mut y: Vec<T> = (0..n).map(|i| b[i] / scale[i]).collect();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s = s - l[k * n + i] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        Some((0..n).map(|i| y[i] / scale[i]).collect())
    }

    pub fn inverse(&self, tol: T) -> Option<Self> {
        let n = self.n;
        let mut inv = Self::zeros(n);
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            let col = self.solve(&e, tol)?;
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        // symmetrize away rounding
        for i in 0..n {
            for j in 0..i {
                let v = (inv.get(i, j) + inv.get(j, i)) / T::lit(2.0);
                inv.set(i, j, v);
                inv.set(j, i, v);
            }
        }
        Some(inv)
    }

    pub fn quad_form(&self, x: &[T]) -> T {
        let mut s = T::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                s = s + x[i] * self.get(i, j) * x[j];
            }
        }
        s
    }
}

/// Least squares `min ||y - X b||²` through the normal equations. Columns of
/// `X` that are identically zero get coefficient zero.
pub(crate) fn least_squares<T: Scalar, R: AsRef<[T]>>(
    rows: &[R],
    y: &[T],
    p: usize,
    tol: T,
) -> Option<Vec<T>> {
    let gram = SymMatrix::gram(rows, p);
    let live: Vec<usize> = (0..p).filter(|&j| gram.get(j, j) > T::zero()).collect();
    let mut rhs = vec![T::zero(); p];
    for (row, &yi) in rows.iter().zip(y) {
        let r = row.as_ref();
        for j in 0..p {
            rhs[j] = rhs[j] + r[j] * yi;
        }
    }
    let sub = gram.select(&live);
    let sub_rhs: Vec<T> = live.iter().map(|&j| rhs[j]).collect();
    let sol = sub.solve(&sub_rhs, tol)?;
    let mut out = vec![T::zero(); p];
    for (k, &j) in live.iter().enumerate() {
        out[j] = sol[k];
    }
    Some(out)
}
