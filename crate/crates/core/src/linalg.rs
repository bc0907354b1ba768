//! Dense row-major matrices and the elementwise kernels shared by the
//! eager evaluator and the gradient tape.
//!
//! Values flowing through the recurrent cells are `rows x batch` blocks: a
//! single sample is a one-column matrix, a mini-batch stacks samples as
//! columns. Every kernel computes each output column with the same sequence
//! of floating-point operations regardless of how many columns are present,
//! so batched and per-sample evaluation agree bit for bit.

use std::fmt;

use crate::error::{ensure, Error, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            for c in 0..self.cols {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self.get(r, c))?;
            }
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            Dimension,
            "{} values cannot fill a {rows}x{cols} matrix",
            data.len()
        );
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            ensure!(r.len() == cols, Dimension, "ragged rows");
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A single column.
    pub fn column(values: Vec<f64>) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column_values(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// The only entry of a 1x1 matrix.
    pub fn as_scalar(&self) -> Option<f64> {
        (self.shape() == (1, 1)).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        ensure!(
            self.cols == rhs.rows,
            Dimension,
            "cannot multiply {}x{} by {}x{}",
            self.rows,
            self.cols,
            rhs.rows,
            rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        let n = rhs.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                let rhs_row = &rhs.data[k * n..(k + 1) * n];
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * rhs^T` without materialising the transpose.
    pub fn matmul_transposed(&self, rhs: &Matrix) -> Result<Matrix> {
        ensure!(
            self.cols == rhs.cols,
            Dimension,
            "cannot multiply {}x{} by transpose of {}x{}",
            self.rows,
            self.cols,
            rhs.rows,
            rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                let b = rhs.row(j);
                out.data[i * rhs.rows + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        Ok(out)
    }

    /// `self^T * rhs` without materialising the transpose.
    pub fn transposed_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        ensure!(
            self.rows == rhs.rows,
            Dimension,
            "cannot multiply transpose of {}x{} by {}x{}",
            self.rows,
            self.cols,
            rhs.rows,
            rhs.cols
        );
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        let n = rhs.cols;
        for i in 0..self.rows {
            let rhs_row = &rhs.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                let out_row = &mut out.data[k * n..(k + 1) * n];
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &Vector) -> Result<Vector> {
        ensure!(
            self.cols == v.len(),
            Dimension,
            "cannot multiply {}x{} matrix by vector of length {}",
            self.rows,
            self.cols,
            v.len()
        );
        Ok(Vector(
            (0..self.rows)
                .map(|r| {
                    self.row(r)
                        .iter()
                        .zip(v.as_slice())
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect(),
        ))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        ensure!(
            self.shape() == other.shape(),
            Dimension,
            "elementwise operation on {}x{} and {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
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

    /// Elementwise sum; `other` may also be a single column broadcast across
    /// every column of `self` (bias addition).
    pub fn add_broadcast(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() == other.shape() {
            return self.zip_map(other, |a, b| a + b);
        }
        ensure!(
            other.cols == 1 && other.rows == self.rows,
            Dimension,
            "cannot add {}x{} to {}x{}",
            other.rows,
            other.cols,
            self.rows,
            self.cols
        );
        let mut out = self.clone();
        for r in 0..self.rows {
            let b = other.data[r];
            for v in &mut out.data[r * self.cols..(r + 1) * self.cols] {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Row sums as a column (adjoint of a broadcast).
    pub fn row_sums(&self) -> Matrix {
        Matrix::column((0..self.rows).map(|r| self.row(r).iter().sum()).collect())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn abs_sum(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    /// In-place `self += other` for equal shapes.
    pub fn accumulate(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `w * a + (1 - w) * b` with `w` either 1x1 or shaped like `a`.
    pub fn convex(w: &Matrix, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        ensure!(
            a.shape() == b.shape(),
            Dimension,
            "convex combination of {}x{} and {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        );
        if let Some(s) = w.as_scalar() {
            return a.zip_map(b, |x, y| s * x + (1.0 - s) * y);
        }
        ensure!(
            w.shape() == a.shape(),
            Dimension,
            "convex weight {}x{} does not match {}x{}",
            w.rows,
            w.cols,
            a.rows,
            a.cols
        );
        Ok(Matrix {
            rows: a.rows,
            cols: a.cols,
            data: w
                .data
                .iter()
                .zip(a.data.iter().zip(&b.data))
                .map(|(&s, (&x, &y))| s * x + (1.0 - s) * y)
                .collect(),
        })
    }
}

/// A dense real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Self {
        Vector(values)
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn to_column(&self) -> Matrix {
        Matrix::column(self.0.clone())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl TryFrom<&Matrix> for Vector {
    type Error = Error;

    fn try_from(m: &Matrix) -> Result<Self> {
        ensure!(
            m.cols() == 1,
            Dimension,
            "expected a column, got {}x{}",
            m.rows(),
            m.cols()
        );
        Ok(Vector(m.data().to_vec()))
    }
}

/// Logistic sigmoid, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)`, stable for large |x|.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn tanh_act(v: &Vector) -> Vector {
    Vector(v.0.iter().map(|x| x.tanh()).collect())
}

pub fn sigmoid_act(v: &Vector) -> Vector {
    Vector(v.0.iter().map(|&x| sigmoid(x)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_identity_and_zero() {
        let v = Vector::new(vec![1.0, 2.0, 3.0]);
        assert_eq!(Matrix::identity(3).matvec(&v).unwrap(), v);
        assert_eq!(
            Matrix::zeros(2, 3).matvec(&v).unwrap(),
            Vector::new(vec![0.0, 0.0])
        );
    }

    #[test]
    fn matvec_hand_example() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let out = m.matvec(&Vector::new(vec![1.0, 1.0])).unwrap();
        assert_eq!(out.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let m = Matrix::zeros(2, 3);
        assert!(matches!(
            m.matvec(&Vector::zeros(2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]).unwrap();
        let b = Matrix::from_vec(4, 3, (0..12).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        assert_eq!(
            a.matmul_transposed(&b).unwrap(),
            a.matmul(&b.transpose()).unwrap()
        );
        let c = Matrix::from_vec(2, 4, (0..8).map(|v| v as f64 - 2.5).collect()).unwrap();
        assert_eq!(
            a.transposed_matmul(&c).unwrap(),
            a.transpose().matmul(&c).unwrap()
        );
    }

    #[test]
    fn batched_matmul_matches_per_column() {
        let a = Matrix::from_vec(3, 3, (0..9).map(|v| (v as f64).sin()).collect()).unwrap();
        let b = Matrix::from_vec(3, 5, (0..15).map(|v| (v as f64 * 0.7).cos()).collect()).unwrap();
        let full = a.matmul(&b).unwrap();
        for c in 0..5 {
            let col = a.matmul(&Matrix::column(b.column_values(c))).unwrap();
            assert_eq!(col.data(), full.column_values(c).as_slice());
        }
    }

    #[test]
    fn tanh_values() {
        assert_eq!(tanh_act(&Vector::new(vec![0.0])).as_slice(), &[0.0]);
        let t = tanh_act(&Vector::new(vec![1.0]));
        assert!((t.0[0] - 0.761_594_155_955_764_9).abs() < 1e-15);
        let big = tanh_act(&Vector::new(vec![15.0, -15.0]));
        assert!(big.0[0] < 1.0 && big.0[0] > 0.999_999);
        assert!(big.0[1] > -1.0 && big.0[1] < -0.999_999);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_act(&Vector::new(vec![0.0])).as_slice(), &[0.5]);
        assert!((sigmoid(2.0) - 0.880_797_077_977_882_4).abs() < 1e-15);
        for x in [-3.0, -0.5, 0.25, 7.0] {
            assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-15);
        }
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(100.0) - 100.0).abs() < 1e-12);
        assert!(softplus(-100.0) > 0.0);
    }

    #[test]
    fn broadcast_add_and_row_sums() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::column(vec![10.0, 20.0]);
        let s = a.add_broadcast(&b).unwrap();
        assert_eq!(s.data(), &[11.0, 12.0, 13.0, 24.0, 25.0, 26.0]);
        assert_eq!(a.row_sums().data(), &[6.0, 15.0]);
        assert!(a.add_broadcast(&Matrix::column(vec![1.0; 3])).is_err());
    }
}
