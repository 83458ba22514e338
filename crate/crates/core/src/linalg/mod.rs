//! Dense row-major matrices of `f64`.
//!
//! One row is one training example throughout the crate. Multiplication comes
//! in two flavours: a register-blocked direct product ([`MatmulAlgo::Naive`],
//! bit-identical to the textbook triple loop) and Strassen's recursive scheme.

mod kernel;
mod strassen;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kernel::gemm_seq;
pub use strassen::STRASSEN_CUTOFF;

/// Both operands need every dimension at least this large before
/// [`MatmulAlgo::Auto`] switches to Strassen.
pub const AUTO_STRASSEN_MIN_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatmulAlgo {
    Naive,
    Strassen,
    #[default]
    Auto,
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl std::fmt::Debug for Matrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list()
                .entries(self.data.chunks(self.cols.max(1)))
                .finish()
        } else {
            write!(f, "[..]")
        }
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidShape {
                op: "Matrix::new",
                msg: format!(
                    "{rows}x{cols} needs {} entries, got {}",
                    rows * cols,
                    data.len()
                ),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidShape {
                    op: "Matrix::from_rows",
                    msg: format!("row {i} has {} entries, expected {cols}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A single-row matrix.
    pub fn row_vector(values: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
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

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.row_iter().map(<[f64]>::to_vec).collect()
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let (r, c) = (self.rows, self.cols);
        let mut out = vec![0.0; r * c];
        // Blocked to keep both sides cache-resident on large inputs.
        const B: usize = 32;
        for i0 in (0..r).step_by(B) {
            for j0 in (0..c).step_by(B) {
                for i in i0..(i0 + B).min(r) {
                    for j in j0..(j0 + B).min(c) {
                        out[j * r + i] = self.data[i * c + j];
                    }
                }
            }
        }
        Matrix {
            rows: c,
            cols: r,
            data: out,
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn map_inplace(&mut self, mut f: impl FnMut(f64) -> f64) {
        for x in &mut self.data {
            *x = f(*x);
        }
    }

    pub fn zip(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.same_shape("zip", other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn zip_inplace(&mut self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<()> {
        self.same_shape("zip_inplace", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = f(*a, b);
        }
        Ok(())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Matrix) -> Result<()> {
        self.zip_inplace(other, |a, b| a + s * b)
    }

    /// Arithmetic mean of each column, as a `1 x cols` matrix.
    pub fn col_means(&self) -> Result<Matrix> {
        if self.rows == 0 {
            return Err(Error::InvalidShape {
                op: "col_means",
                msg: "matrix has no rows".into(),
            });
        }
        let mut sums = self.col_sums();
        let m = self.rows as f64;
        for s in &mut sums {
            *s /= m;
        }
        Ok(Matrix::row_vector(&sums))
    }

    /// Column sums accumulated in row order.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (s, &x) in sums.iter_mut().zip(row) {
                *s += x;
            }
        }
        sums
    }

    /// Adds `v` to every row.
    pub fn add_row_broadcast(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.cols {
            return Err(Error::shape(
                "add_row_broadcast",
                self.shape(),
                (1, v.len()),
            ));
        }
        let cols = self.cols;
        for row in self.data.chunks_exact_mut(cols.max(1)) {
            for (x, &b) in row.iter_mut().zip(v) {
                *x += b;
            }
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn sum_abs(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Index of the largest entry in each row; the lowest index wins ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.row_iter()
            .map(|row| {
                let mut best = 0;
                for (j, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn matmul(&self, other: &Matrix, algo: MatmulAlgo) -> Result<Matrix> {
        matmul(self, other, algo)
    }

    /// Direct product; shorthand for `matmul(.., MatmulAlgo::Naive)`.
    pub fn dot(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other, MatmulAlgo::Naive)
    }

    fn same_shape(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        Ok(())
    }
}

/// Matrix product `a * b`.
///
/// `Strassen` zero-pads both operands to the next power of two, recurses
/// with seven products per level and switches to the direct product below
/// [`STRASSEN_CUTOFF`]. `Auto` uses Strassen once every dimension reaches
/// [`AUTO_STRASSEN_MIN_DIM`].
pub fn matmul(a: &Matrix, b: &Matrix, algo: MatmulAlgo) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let use_strassen = match algo {
        MatmulAlgo::Naive => false,
        MatmulAlgo::Strassen => true,
        MatmulAlgo::Auto => m.min(k).min(n) >= AUTO_STRASSEN_MIN_DIM,
    };
    let data = if use_strassen {
        strassen::strassen(&a.data, &b.data, m, k, n, STRASSEN_CUTOFF)
    } else {
        let mut c = vec![0.0; m * n];
        kernel::gemm(&a.data, &b.data, &mut c, m, k, n);
        c
    };
    Ok(Matrix {
        rows: m,
        cols: n,
        data,
    })
}

/// Strassen product recursing down to square blocks of side `cutoff`
/// instead of [`STRASSEN_CUTOFF`]. Small cutoffs exercise the recursion on
/// small inputs; zero is rejected.
pub fn strassen_with_cutoff(a: &Matrix, b: &Matrix, cutoff: usize) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape("strassen", a.shape(), b.shape()));
    }
    if cutoff == 0 {
        return Err(Error::Parameter(
            "Strassen cutoff must be at least 1".into(),
        ));
    }
    let data = strassen::strassen(&a.data, &b.data, a.rows, a.cols, b.cols, cutoff);
    Ok(Matrix {
        rows: a.rows,
        cols: b.cols,
        data,
    })
}

pub fn transpose(a: &Matrix) -> Matrix {
    a.transpose()
}

pub fn col_means(a: &Matrix) -> Result<Matrix> {
    a.col_means()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn triple_loop(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|p| a.get(i, p) * b.get(p, j)).sum()
        })
    }

    fn assert_close(x: &Matrix, y: &Matrix, rel: f64) {
        assert_eq!(x.shape(), y.shape());
        for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() <= rel * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn identity_times_matrix() {
        let a = Matrix::from_rows(&[[1.5, -2.0], [0.25, 7.0]]).unwrap();
        for algo in [MatmulAlgo::Naive, MatmulAlgo::Strassen, MatmulAlgo::Auto] {
            assert_eq!(matmul(&Matrix::identity(2), &a, algo).unwrap(), a);
        }
    }

    #[test]
    fn three_by_five_times_five_by_two() {
        let a = Matrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64 - 6.0);
        let b = Matrix::from_fn(5, 2, |i, j| (i as f64) * 0.5 - j as f64);
        let c = a.dot(&b).unwrap();
        assert_eq!(c.shape(), (3, 2));
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..5 {
                    s += a.get(i, p) * b.get(p, j);
                }
                assert_eq!(c.get(i, j), s);
            }
        }
    }

    #[test]
    fn naive_is_bit_identical_to_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(m, k, n) in &[(1, 1, 1), (5, 17, 33), (37, 64, 19), (70, 130, 45)] {
            let a = random(m, k, &mut rng);
            let b = random(k, n, &mut rng);
            assert_eq!(a.dot(&b).unwrap(), triple_loop(&a, &b));
        }
    }

    #[test]
    fn strassen_matches_naive_64() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let a = random(64, 64, &mut rng);
        let b = random(64, 64, &mut rng);
        let naive = a.dot(&b).unwrap();
        let fast = matmul(&a, &b, MatmulAlgo::Strassen).unwrap();
        assert_close(&fast, &naive, 1e-9);
    }

    #[test]
    fn strassen_recurses_above_cutoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let a = random(130, 70, &mut rng);
        let b = random(70, 129, &mut rng);
        let naive = a.dot(&b).unwrap();
        let fast = matmul(&a, &b, MatmulAlgo::Strassen).unwrap();
        assert_close(&fast, &naive, 1e-9);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let err = matmul(
            &Matrix::zeros(2, 3),
            &Matrix::zeros(2, 3),
            MatmulAlgo::Naive,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
        assert!(matches!(
            err,
            Error::Shape {
                left: (2, 3),
                right: (2, 3),
                ..
            }
        ));
    }

    #[test]
    fn transpose_cases() {
        let x = Matrix::from_rows(&[[4.0]]).unwrap();
        assert_eq!(x.transpose(), x);
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let t = Matrix::from_rows(&[[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]]).unwrap();
        assert_eq!(a.transpose(), t);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = random(7, 3, &mut rng);
        assert_eq!(r.transpose().transpose(), r);
    }

    #[test]
    fn map_and_zip() {
        let a = Matrix::from_rows(&[[1.0, -2.0], [3.5, 0.0]]).unwrap();
        assert_eq!(a.map(|x| x), a);
        assert_eq!(a.zip(&a, |x, y| x - y).unwrap(), Matrix::zeros(2, 2));
        let p = Matrix::row_vector(&[1.0, 2.0])
            .zip(&Matrix::row_vector(&[3.0, 4.0]), |x, y| x * y)
            .unwrap();
        assert_eq!(p, Matrix::row_vector(&[3.0, 8.0]));
        assert!(a.zip(&Matrix::zeros(1, 2), |x, _| x).is_err());
    }

    #[test]
    fn col_means_cases() {
        let a = Matrix::from_rows(&[[1.0], [3.0]]).unwrap();
        assert_eq!(a.col_means().unwrap(), Matrix::row_vector(&[2.0]));
        let c = Matrix::filled(4, 3, 2.5);
        assert_eq!(c.col_means().unwrap(), Matrix::row_vector(&[2.5; 3]));
        let b = Matrix::from_rows(&[[0.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(b.col_means().unwrap(), Matrix::row_vector(&[0.5, 1.0]));
        assert!(Matrix::zeros(0, 3).col_means().is_err());
    }

    #[test]
    fn argmax_lowest_index_wins_ties() {
        let a = Matrix::from_rows(&[[0.1, 0.5, 0.5], [2.0, 2.0, 1.0]]).unwrap();
        assert_eq!(a.argmax_rows(), vec![1, 0]);
    }
}
