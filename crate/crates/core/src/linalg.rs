//! Small dense linear algebra: row-major matrices, Cholesky, symmetric
//! eigendecomposition. Sized for the moment matrices and Schur complements
//! produced by the NPA builder (a few hundred to a few thousand rows).

use std::ops::{Index, IndexMut};

use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn scaled_identity(n: usize, s: T) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = s;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
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
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn add_scaled(&mut self, s: T, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut m = self.clone();
        m.scale(s);
        m
    }

    /// Replace with `(M + Mᵀ)/2`.
    pub fn symmetrize(&mut self) {
        let half = T::lit(0.5);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = half * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    /// Frobenius inner product `tr(AᵀB)`.
    pub fn dot(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..n {
        s += a[k] * b[k];
    }
    s
}

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factor a symmetric positive definite matrix (only the lower triangle is read).
    pub fn new(a: &Matrix<T>) -> Result<Self, LinalgError> {
        let n = a.rows();
        if a.cols() != n {
            return Err(LinalgError::Dimension(format!("{}x{} is not square", n, a.cols())));
        }
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s = {
                    let (li, lj) = (l.row(i), l.row(j));
                    a[(i, j)] - dot(&li[..j], &lj[..j])
                };
                if i == j {
                    if !(s > T::zero()) || !s.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite(i));
                    }
                    l[(i, i)] = s.sqrt();
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &Matrix<T> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let y = self.solve_lower(b);
        self.solve_upper(y)
    }

    /// Solve `L y = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let row = self.l.row(i);
            let s = y[i] - dot(&row[..i], &y[..i]);
            y[i] = s / row[i];
        }
        y
    }

    /// Solve `Lᵀ x = y`.
    pub fn solve_upper(&self, mut y: Vec<T>) -> Vec<T> {
        let n = self.dim();
        for i in (0..n).rev() {
            let row = self.l.row(i);
            let xi = y[i] / row[i];
            y[i] = xi;
            for k in 0..i {
                y[k] -= row[k] * xi;
            }
        }
        y
    }

    /// `L⁻¹` as a dense lower-triangular matrix.
    pub fn lower_inverse(&self) -> Matrix<T> {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        for i in 0..n {
            inv[(i, i)] = T::one() / self.l[(i, i)];
            for j in 0..i {
                let mut s = T::zero();
                for k in j..i {
                    s += self.l[(i, k)] * inv[(k, j)];
                }
                inv[(i, j)] = -s / self.l[(i, i)];
            }
        }
        inv
    }

    /// `A⁻¹ = L⁻ᵀ L⁻¹`.
    pub fn inverse(&self) -> Matrix<T> {
        let li = self.lower_inverse();
        let n = self.dim();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                // column i and column j of L⁻¹, nonzero from max(i, j) = i down.
                let mut s = T::zero();
                for k in i..n {
                    s += li[(k, i)] * li[(k, j)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    pub fn log_det(&self) -> T {
        (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<T>() * T::lit(2.0)
    }
}

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen<T> {
    /// Eigenvalues in ascending order.
    pub values: Vec<T>,
    /// Eigenvectors stored as columns, matching `values`.
    pub vectors: Matrix<T>,
}

impl<T: Scalar> SymmetricEigen<T> {
    /// Householder tridiagonalization followed by implicit QL iterations.
    pub fn new(a: &Matrix<T>) -> Self {
        let n = a.rows();
        assert_eq!(n, a.cols(), "eigen of non-square matrix");
        let mut v = a.clone();
        v.symmetrize();
        let mut d = vec![T::zero(); n];
        let mut e = vec![T::zero(); n];
        if n > 0 {
            tridiagonalize(&mut v, &mut d, &mut e);
            ql_implicit(&mut v, &mut d, &mut e);
        }
        Self { values: d, vectors: v }
    }

    pub fn min(&self) -> T {
        self.values.first().copied().unwrap_or_else(T::zero)
    }

    pub fn max(&self) -> T {
        self.values.last().copied().unwrap_or_else(T::zero)
    }

    /// Rebuild `V diag(f(λ)) Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        let n = self.values.len();
        let mut out = Matrix::zeros(n, n);
        for (k, &lam) in self.values.iter().enumerate() {
            let w = f(lam);
            if w == T::zero() {
                continue;
            }
            for i in 0..n {
                let vik = self.vectors[(i, k)] * w;
                if vik == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += vik * self.vectors[(j, k)];
                }
            }
        }
        out
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<T: Scalar>(a: &Matrix<T>) -> T {
    SymmetricEigen::new(a).min()
}

/// Projection onto the positive semidefinite cone (negative eigenvalues clipped).
pub fn psd_projection<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    SymmetricEigen::new(a).reconstruct_with(|l| l.max(T::zero()))
}

fn tridiagonalize<T: Scalar>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
                v[(j, i)] = T::zero();
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = T::zero();
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let upd = f * e[k] + g * d[k];
                    v[(k, j)] -= upd;
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = T::zero();
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    let upd = g * d[k];
                    v[(k, j)] -= upd;
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = T::zero();
    }
    v[(n - 1, n - 1)] = T::one();
    e[0] = T::zero();
}

fn ql_implicit<T: Scalar>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    let eps = T::epsilon();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (T::lit(2.0) * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[(k, i + 1)];
                        let vki = v[(k, i)];
                        v[(k, i + 1)] = s * vki + c * h;
                        v[(k, i)] = c * vki - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 || iter > 60 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    // sort ascending
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for (j, &dj) in d.iter().enumerate().skip(i + 1) {
            if dj < p {
                k = j;
                p = dj;
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            for r in 0..n {
                let tmp = v[(r, i)];
                v[(r, i)] = v[(r, k)];
                v[(r, k)] = tmp;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] = rng.random_range(-1.0..1.0);
            }
        }
        let mut a = g.matmul(&g.transpose());
        for i in 0..n {
            a[(i, i)] += 0.5;
        }
        a
    }

    #[test]
    fn cholesky_solves_and_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 5, 17] {
            let a = random_spd(n, &mut rng);
            let ch = Cholesky::new(&a).unwrap();
            let b: Vec<f64> = (0..n).map(|i| i as f64 - 1.5).collect();
            let x = ch.solve(&b);
            let ax = a.mul_vec(&x);
            for (u, v) in ax.iter().zip(&b) {
                assert!((u - v).abs() < 1e-9);
            }
            let prod = a.matmul(&ch.inverse());
            let id = Matrix::<f64>::identity(n);
            for i in 0..n {
                for j in 0..n {
                    assert!((prod[(i, j)] - id[(i, j)]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::<f64>::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(Cholesky::new(&a).unwrap_err(), LinalgError::NotPositiveDefinite(1));
    }

    #[test]
    fn eigen_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1, 2, 3, 8, 30] {
            let mut a = Matrix::<f64>::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = rng.random_range(-2.0..2.0);
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
            let eig = SymmetricEigen::new(&a);
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
            let back = eig.reconstruct_with(|l| l);
            for i in 0..n {
                for j in 0..n {
                    assert!((back[(i, j)] - a[(i, j)]).abs() < 1e-10, "n={n}");
                }
            }
            let tr: f64 = eig.values.iter().sum();
            assert!((tr - a.trace()).abs() < 1e-10);
        }
    }

    #[test]
    fn eigen_known_values_f32() {
        let a = Matrix::<f32>::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let eig = SymmetricEigen::new(&a);
        assert!((eig.values[0] - 1.0).abs() < 1e-5);
        assert!((eig.values[1] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn psd_projection_clips() {
        let a = Matrix::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.0, -3.0]]);
        let p = psd_projection(&a);
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(p[(1, 1)].abs() < 1e-12);
    }
}
