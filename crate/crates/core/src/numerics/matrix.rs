use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// A dense `rows × cols` matrix of `f64`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

use kernel::{TILE_COLS, TILE_ROWS};

impl Matrix {
    /// Build a matrix from row-major data. Rejects a length mismatch and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} entries for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::arg(format!(
                "matrix entry ({}, {}) is not finite",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for results of arithmetic on validated inputs.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from a slice of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::shape(
                "Matrix::from_rows",
                format!("{cols} columns"),
                format!("{} columns in row {bad}", rows[bad].len()),
            ));
        }
        Self::new(rows.len(), cols, rows.concat())
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
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
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Self::from_raw(self.cols, self.rows, out)
    }

    /// Select a subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            out.extend_from_slice(self.row(i));
        }
        Self::from_raw(idx.len(), self.cols, out)
    }

    /// `self · rhs` using the default execution mode.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        self.matmul_with(rhs, Exec::default())
    }

    /// `self · rhs`. Each output entry is accumulated from 0 sequentially over
    /// the inner index, so the result does not depend on `exec` or on the
    /// SIMD width the compiler picks.
    pub fn matmul_with(&self, rhs: &Matrix, exec: Exec) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::shape(
                "matmul",
                format!("lhs.cols == rhs.rows ({} )", self.cols),
                format!("{}x{} · {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        let (m, inner, p) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; m * p];
        if p > 0 && inner > 0 {
            exec.for_each_chunk_mut(&mut out, TILE_ROWS * p, |block, chunk| {
                let r0 = block * TILE_ROWS;
                let nrows = chunk.len() / p;
                matmul_block(&self.data[r0 * inner..], inner, &rhs.data, p, chunk, nrows);
            });
        }
        Ok(Self::from_raw(m, p, out))
    }

    /// Add `v` to every row.
    pub(crate) fn add_row_vector(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.cols);
        for row in self.data.chunks_mut(self.cols.max(1)) {
            for (x, b) in row.iter_mut().zip(v) {
                *x += b;
            }
        }
    }

    /// Column sums, accumulated sequentially down each column.
    pub(crate) fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols.max(1)) {
            for (s, x) in out.iter_mut().zip(row) {
                *s += x;
            }
        }
        out
    }
}

/// Computes `nrows` output rows of `A · B` into `out`.
///
/// `a` starts at the first of those rows (stride `inner`); `b` is `inner × p`.
fn matmul_block(a: &[f64], inner: usize, b: &[f64], p: usize, out: &mut [f64], nrows: usize) {
    if nrows == TILE_ROWS {
        matmul_rows::<TILE_ROWS>(a, inner, b, p, out);
    } else {
        for r in 0..nrows {
            matmul_rows::<1>(&a[r * inner..], inner, b, p, &mut out[r * p..(r + 1) * p]);
        }
    }
}

#[inline(always)]
fn matmul_rows<const R: usize>(a: &[f64], inner: usize, b: &[f64], p: usize, out: &mut [f64]) {
    let mut k0 = 0;
    while k0 + TILE_COLS <= p {
        kernel::tile::<R>(a, inner, b, p, k0, out);
        k0 += TILE_COLS;
    }
    // ragged right edge
    for k in k0..p {
        let mut acc = [0.0f64; R];
        for j in 0..inner {
            let bv = b[j * p + k];
            for r in 0..R {
                acc[r] += a[r * inner + j] * bv;
            }
        }
        for r in 0..R {
            out[r * p + k] = acc[r];
        }
    }
}

/// Register-tile kernels. Each computes `out[r][k0..k0 + TILE_COLS]` for
/// `r < R` as `Σ_j a[r][j] · b[j][k]`, accumulated from zero in increasing
/// `j` with a separate multiply and add, so every variant rounds exactly
/// like the scalar loop.
#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
mod kernel {
    use std::arch::x86_64::*;

    pub const TILE_ROWS: usize = 4;
    pub const TILE_COLS: usize = 32;

    #[inline(always)]
    pub fn tile<const R: usize>(a: &[f64], inner: usize, b: &[f64], p: usize, k0: usize, out: &mut [f64]) {
        assert!(R >= 1 && inner >= 1);
        assert!(a.len() >= (R - 1) * inner + inner);
        assert!(k0 + TILE_COLS <= p && b.len() >= (inner - 1) * p + p);
        assert!(out.len() >= (R - 1) * p + k0 + TILE_COLS);
        // SAFETY: the assertions above bound every pointer offset below, and
        // avx512f is enabled for this compilation target.
        unsafe {
            let mut acc = [[_mm512_setzero_pd(); 4]; R];
            for j in 0..inner {
                let bp = b.as_ptr().add(j * p + k0);
                let bv = [
                    _mm512_loadu_pd(bp),
                    _mm512_loadu_pd(bp.add(8)),
                    _mm512_loadu_pd(bp.add(16)),
                    _mm512_loadu_pd(bp.add(24)),
                ];
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = _mm512_set1_pd(*a.get_unchecked(r * inner + j));
                    for (q, x) in row.iter_mut().enumerate() {
                        *x = _mm512_add_pd(*x, _mm512_mul_pd(av, bv[q]));
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                let op = out.as_mut_ptr().add(r * p + k0);
                for (q, x) in row.iter().enumerate() {
                    _mm512_storeu_pd(op.add(8 * q), *x);
                }
            }
        }
    }
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx", not(target_feature = "avx512f")))]
mod kernel {
    use std::arch::x86_64::*;

    pub const TILE_ROWS: usize = 3;
    pub const TILE_COLS: usize = 16;

    #[inline(always)]
    pub fn tile<const R: usize>(a: &[f64], inner: usize, b: &[f64], p: usize, k0: usize, out: &mut [f64]) {
        assert!(R >= 1 && inner >= 1);
        assert!(a.len() >= (R - 1) * inner + inner);
        assert!(k0 + TILE_COLS <= p && b.len() >= (inner - 1) * p + p);
        assert!(out.len() >= (R - 1) * p + k0 + TILE_COLS);
        // SAFETY: the assertions above bound every pointer offset below, and
        // avx is enabled for this compilation target.
        unsafe {
            let mut acc = [[_mm256_setzero_pd(); 4]; R];
            for j in 0..inner {
                let bp = b.as_ptr().add(j * p + k0);
                let bv = [
                    _mm256_loadu_pd(bp),
                    _mm256_loadu_pd(bp.add(4)),
                    _mm256_loadu_pd(bp.add(8)),
                    _mm256_loadu_pd(bp.add(12)),
                ];
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = _mm256_set1_pd(*a.get_unchecked(r * inner + j));
                    for (q, x) in row.iter_mut().enumerate() {
                        *x = _mm256_add_pd(*x, _mm256_mul_pd(av, bv[q]));
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                let op = out.as_mut_ptr().add(r * p + k0);
                for (q, x) in row.iter().enumerate() {
                    _mm256_storeu_pd(op.add(4 * q), *x);
                }
            }
        }
    }
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "avx")))]
mod kernel {
    pub const TILE_ROWS: usize = 4;
    pub const TILE_COLS: usize = 32;

    #[inline(always)]
    pub fn tile<const R: usize>(a: &[f64], inner: usize, b: &[f64], p: usize, k0: usize, out: &mut [f64]) {
        let mut acc = [[0.0f64; TILE_COLS]; R];
        for j in 0..inner {
            let brow: &[f64; TILE_COLS] = b[j * p + k0..j * p + k0 + TILE_COLS].try_into().unwrap();
            for r in 0..R {
                let av = a[r * inner + j];
                for c in 0..TILE_COLS {
                    acc[r][c] += av * brow[c];
                }
            }
        }
        for r in 0..R {
            out[r * p + k0..r * p + k0 + TILE_COLS].copy_from_slice(&acc[r]);
        }
    }
}
