//! Dense row-major matrices and the scalar nonlinearities used by the
//! networks and loss terms.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    /// Wraps row-major `data`; rejects a wrong length or non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Length {
                op: "Matrix::new",
                left: rows * cols,
                right: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Matrix::new"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", (i, r.len()), (0, cols)));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact(0) panics, so a zero-width matrix yields empty rows by hand.
        let cols = self.cols.max(1);
        let empty: &[T] = &[];
        (0..self.rows).map(move |r| {
            if self.cols == 0 {
                empty
            } else {
                &self.data[r * cols..(r + 1) * cols]
            }
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Gathers the given rows, in order (repeats allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks matrices vertically; all must share the column count.
    pub fn vstack(parts: &[&Matrix<T>]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(Error::shape("vstack", (rows, cols), m.shape()));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Splits into the first `at` rows and the remainder.
    pub fn split_rows(&self, at: usize) -> (Self, Self) {
        let at = at.min(self.rows);
        let (top, bottom) = self.data.split_at(at * self.cols);
        (
            Matrix {
                rows: at,
                cols: self.cols,
                data: top.to_vec(),
            },
            Matrix {
                rows: self.rows - at,
                cols: self.cols,
                data: bottom.to_vec(),
            },
        )
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix<T>) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        Ok(gemm_strided(
            m,
            k,
            n,
            (&self.data, k as isize, 1),
            (&other.data, n as isize, 1),
        ))
    }

    /// `self · otherᵀ`.
    pub fn matmul_transposed(&self, other: &Matrix<T>) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::shape("matmul_transposed", self.shape(), other.shape()));
        }
        let (m, k, n) = (self.rows, self.cols, other.rows);
        Ok(gemm_strided(
            m,
            k,
            n,
            (&self.data, k as isize, 1),
            (&other.data, 1, k as isize),
        ))
    }

    /// `selfᵀ · other`.
    pub fn transposed_matmul(&self, other: &Matrix<T>) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::shape("transposed_matmul", self.shape(), other.shape()));
        }
        let (m, k, n) = (self.cols, self.rows, other.cols);
        Ok(gemm_strided(
            m,
            k,
            n,
            (&self.data, 1, m as isize),
            (&other.data, n as isize, 1),
        ))
    }

    /// Sum of each column.
    pub fn column_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for r in self.row_iter() {
            for (o, &v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    pub fn add_row_vector(&mut self, v: &[T]) {
        debug_assert_eq!(v.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for r in self.data.chunks_exact_mut(self.cols) {
            for (x, &b) in r.iter_mut().zip(v) {
                *x += b;
            }
        }
    }
}

fn gemm_strided<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: (&[T], isize, isize),
    b: (&[T], isize, isize),
) -> Matrix<T> {
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 {
        return out;
    }
    if k == 0 {
        return out;
    }
    // SAFETY: the strides above describe exactly the row-major layouts of
    // operands whose dimensions were validated by the callers.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// Standard matrix product; errors name both shapes on mismatch.
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    a.matmul(b)
}

pub fn tanh_elementwise<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    m.map(|v| v.tanh())
}

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + e^x)` without overflow for large |x|.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn squared_distance<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Gaussian kernel `exp(-gamma * ||z1 - z2||^2)`.
pub fn gaussian_kernel<T: Real>(z1: &[T], z2: &[T], gamma: T) -> Result<T> {
    if z1.len() != z2.len() {
        return Err(Error::Length {
            op: "gaussian_kernel",
            left: z1.len(),
            right: z2.len(),
        });
    }
    if !(gamma > T::zero()) {
        return Err(Error::invalid("gaussian_kernel: gamma must be positive"));
    }
    Ok((-gamma * squared_distance(z1, z2)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_product() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn orthogonal_vectors() {
        let r = matmul(&m(&[&[1.0, 0.0]]), &m(&[&[0.0], &[1.0]])).unwrap();
        assert_eq!(r.as_slice(), &[0.0]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let err = matmul(&Matrix::<f64>::zeros(3, 4), &Matrix::zeros(5, 2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3x4") && msg.contains("5x2"), "{msg}");
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Matrix::<f64>::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 5.0);
        let b = Matrix::<f64>::from_fn(2, 4, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5));
        assert_eq!(a.matmul_transposed(&b).unwrap(), a.matmul(&b.transpose()).unwrap());
        let c = Matrix::<f64>::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        assert_eq!(a.transposed_matmul(&c).unwrap(), a.transpose().matmul(&c).unwrap());
    }

    #[test]
    fn tanh_examples() {
        let out = tanh_elementwise(&m(&[&[0.0, 50.0, 1.0, -50.0]]));
        assert_eq!(out.get(0, 0), 0.0);
        // tanh(50) rounds to exactly 1.0 in binary64; the open-interval claim
        // holds for the mathematical value, the test pins the saturation limit.
        assert!(out.get(0, 1) > 1.0 - 1e-9 && out.get(0, 1) <= 1.0);
        // tanh(1) from mpmath at 30 digits
        assert!((out.get(0, 2) - 0.761594155955764888119458282605).abs() < 1e-15);
        assert!(out.get(0, 3) < -1.0 + 1e-9);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        let lo = sigmoid(-1000.0f64);
        assert!(!lo.is_nan() && (0.0..=1e-300).contains(&lo));
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!((sigmoid(3.0f64) + sigmoid(-3.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(800.0f64), 800.0);
        assert!(softplus(-800.0f64) >= 0.0);
        assert!(softplus(-800.0f64) < 1e-300);
    }

    #[test]
    fn kernel_examples() {
        let z = [0.3, -0.2, 0.9];
        assert_eq!(gaussian_kernel(&z, &z, 0.7).unwrap(), 1.0);
        assert!((gaussian_kernel(&[0.0f64], &[1.0], 1.0).unwrap() - 0.36787944117144233).abs() < 1e-15);
        let k = gaussian_kernel(&[0.0, 0.0], &[3.0, 4.0], 0.1).unwrap();
        assert!((k - (-2.5f64).exp()).abs() < 1e-15);
        assert!(gaussian_kernel(&[0.0], &[0.0, 1.0], 1.0).is_err());
        assert!(gaussian_kernel(&[0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn non_finite_entries_rejected() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0]).is_err());
    }

    fn small_matrix(r: usize, c: usize) -> impl Strategy<Value = Matrix<f64>> {
        prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative(a in small_matrix(3, 4), b in small_matrix(4, 2), c in small_matrix(2, 5)) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.as_slice().iter().fold(1.0f64, |s, v| s.max(v.abs()));
            for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn tanh_stays_inside_open_interval(x in -18.0f64..18.0) {
            let t = x.tanh();
            prop_assert!(t > -1.0 && t < 1.0);
        }

        #[test]
        fn sigmoid_monotone_and_symmetric(x in -700.0f64..700.0, dx in 1e-3f64..5.0) {
            prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() <= 1e-12);
            prop_assert!(sigmoid(x + dx) >= sigmoid(x));
        }

        #[test]
        fn kernel_symmetric(a in prop::collection::vec(-2.0f64..2.0, 4), b in prop::collection::vec(-2.0f64..2.0, 4), g in 0.01f64..5.0) {
            prop_assert_eq!(gaussian_kernel(&a, &b, g).unwrap(), gaussian_kernel(&b, &a, g).unwrap());
        }
    }
}
