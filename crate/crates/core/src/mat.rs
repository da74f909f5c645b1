//! Dense row-major matrices and the small kernels shared by the attention paths.

use num_traits::Float;

use crate::error::{PisaError, Result};

/// Row-major `rows x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(PisaError::InvalidDimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PisaError::InvalidDimension("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::from_vec(rows.len(), cols, data)
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
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn scaled(&self, c: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Converts to the given accumulation precision.
    pub fn to_precision<T: Float>(&self) -> Vec<T> {
        self.data
            .iter()
            .map(|&x| T::from(x).expect("f64 converts to any float"))
            .collect()
    }
}

/// Checks that Q, K, V form a valid single-head attention problem.
pub(crate) fn check_qkv(q: &Mat, k: &Mat, v: &Mat) -> Result<()> {
    if q.rows() == 0 || q.cols() == 0 {
        return Err(PisaError::InvalidDimension("empty query matrix".into()));
    }
    if k.rows() != v.rows() || k.rows() == 0 {
        return Err(PisaError::InvalidDimension(format!(
            "K has {} rows, V has {}",
            k.rows(),
            v.rows()
        )));
    }
    if q.cols() != k.cols() {
        return Err(PisaError::InvalidDimension(format!(
            "Q has head_dim {}, K has {}",
            q.cols(),
            k.cols()
        )));
    }
    Ok(())
}

pub(crate) fn check_divisible(seq_len: usize, block_size: usize) -> Result<()> {
    if block_size == 0 {
        return Err(PisaError::InvalidDimension("block size must be >= 1".into()));
    }
    if seq_len % block_size != 0 {
        return Err(PisaError::BlockDivisibility {
            seq_len,
            block_size,
        });
    }
    Ok(())
}

/// Dot product with four independent accumulators.
///
/// The summation order is fixed, so results are reproducible bit for bit.
#[inline]
pub fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] = acc[0] + x[0] * y[0];
        acc[1] = acc[1] + x[1] * y[1];
        acc[2] = acc[2] + x[2] * y[2];
        acc[3] = acc[3] + x[3] * y[3];
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a * x`
#[inline]
pub fn axpy<T: Float>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// Row vector times square matrix: `out = x · m` with `m` stored row-major `d x d`.
pub fn vec_mat(x: &[f64], m: &[f64], out: &mut [f64]) {
    let d = x.len();
    out.fill(0.0);
    for (r, &xr) in x.iter().enumerate() {
        axpy(xr, &m[r * d..(r + 1) * d], out);
    }
}

/// Largest relative elementwise deviation: `max|a - b| / max|b|`.
pub fn rel_linf(a: &[f64], b: &[f64]) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let den = b.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
