//! Row-major dense complex matrix with the handful of products the
//! butterfly machinery needs. Blocks are small (a few hundred rows at
//! most), so simple saxpy-ordered loops over contiguous rows are enough.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use num_complex::Complex64;

use crate::rng::Rng;

pub const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const C_ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat { rows, cols, data: vec![C_ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C_ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMat { rows, cols, data }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        CMat { rows, cols, data }
    }

    /// Gaussian random matrix (independent standard normal re/im parts).
    pub fn random(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(rng.cnormal());
        }
        CMat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [Complex64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn entry_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Copy of the row range `r` (all columns).
    pub fn row_block(&self, r: Range<usize>) -> CMat {
        debug_assert!(r.end <= self.rows);
        CMat {
            rows: r.len(),
            cols: self.cols,
            data: self.data[r.start * self.cols..r.end * self.cols].to_vec(),
        }
    }

    /// Copy of the column range `c` (all rows).
    pub fn col_block(&self, c: Range<usize>) -> CMat {
        debug_assert!(c.end <= self.cols);
        let mut out = CMat::zeros(self.rows, c.len());
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[c.clone()]);
        }
        out
    }

    pub fn sub_block(&self, r: Range<usize>, c: Range<usize>) -> CMat {
        let mut out = CMat::zeros(r.len(), c.len());
        for (oi, i) in r.enumerate() {
            out.row_mut(oi).copy_from_slice(&self.row(i)[c.clone()]);
        }
        out
    }

    /// Write `block` into the row/col offset position.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &CMat) {
        debug_assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for i in 0..block.rows {
            self.row_mut(r0 + i)[c0..c0 + block.cols].copy_from_slice(block.row(i));
        }
    }

    /// self[r0.., c0..] += block
    pub fn add_block(&mut self, r0: usize, c0: usize, block: &CMat) {
        for i in 0..block.rows {
            let dst = &mut self.row_mut(r0 + i)[c0..c0 + block.cols];
            for (d, s) in dst.iter_mut().zip(block.row(i)) {
                *d += *s;
            }
        }
    }

    /// Stack `mats` vertically (all must share the column count).
    pub fn vstack(mats: &[&CMat]) -> CMat {
        if mats.is_empty() {
            return CMat::zeros(0, 0);
        }
        let cols = mats[0].cols;
        let rows = mats.iter().map(|m| m.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in mats {
            debug_assert_eq!(m.cols, cols);
            data.extend_from_slice(&m.data);
        }
        CMat { rows, cols, data }
    }

    pub fn transpose(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn conj_transpose(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn scale(&mut self, alpha: Complex64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn scaled(&self, alpha: Complex64) -> CMat {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: Complex64, other: &CMat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (d, s) in self.data.iter_mut().zip(&other.data) {
            *d += alpha * *s;
        }
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        let mut out = self.clone();
        out.axpy(Complex64::new(-1.0, 0.0), other);
        out
    }

    pub fn frob_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v.norm_sqr()).sum::<f64>())
    }

    pub fn max_abs(&self) -> f64 {
        let mut best = 0.0f64;
        for v in &self.data {
            let a = v.norm_sqr();
            if a > best {
                best = a;
            }
        }
        libm::sqrt(best)
    }

    /// C = self · b
    pub fn matmul(&self, b: &CMat) -> CMat {
        let mut c = CMat::zeros(self.rows, b.cols);
        gemm_acc(&mut c, self, b);
        c
    }

    /// C = selfᵀ · b (plain transpose, no conjugation)
    pub fn t_matmul(&self, b: &CMat) -> CMat {
        let mut c = CMat::zeros(self.cols, b.cols);
        gemm_tn_acc(&mut c, self, b);
        c
    }

    /// C = selfᴴ · b
    pub fn h_matmul(&self, b: &CMat) -> CMat {
        let mut c = CMat::zeros(self.cols, b.cols);
        gemm_hn_acc(&mut c, self, b);
        c
    }
}

impl core::ops::Index<(usize, usize)> for CMat {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// c += a · b
pub fn gemm_acc(c: &mut CMat, a: &CMat, b: &CMat) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(c.rows, a.rows);
    assert_eq!(c.cols, b.cols);
    let n = b.cols;
    if n == 0 || a.rows == 0 || a.cols == 0 {
        return;
    }
    for i in 0..a.rows {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * n..(k + 1) * n];
            axpy_row(crow, aik, brow);
        }
    }
}

/// c += aᵀ · b (no conjugation)
pub fn gemm_tn_acc(c: &mut CMat, a: &CMat, b: &CMat) {
    assert_eq!(a.rows, b.rows, "gemm inner dimension");
    assert_eq!(c.rows, a.cols);
    assert_eq!(c.cols, b.cols);
    for k in 0..a.rows {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, &aki) in arow.iter().enumerate() {
            axpy_row(c.row_mut(i), aki, brow);
        }
    }
}

/// c += aᴴ · b
pub fn gemm_hn_acc(c: &mut CMat, a: &CMat, b: &CMat) {
    assert_eq!(a.rows, b.rows, "gemm inner dimension");
    for k in 0..a.rows {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, &aki) in arow.iter().enumerate() {
            axpy_row(c.row_mut(i), aki.conj(), brow);
        }
    }
}

#[inline]
fn axpy_row(dst: &mut [Complex64], alpha: Complex64, src: &[Complex64]) {
    if alpha.re == 0.0 && alpha.im == 0.0 {
        return;
    }
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn matmul_small() {
        let a = CMat::from_rows(2, 2, vec![c(1.0, 0.0), c(0.0, 1.0), c(2.0, 0.0), c(1.0, -1.0)]);
        let b = CMat::identity(2);
        assert_eq!(a.matmul(&b), a);
        let ab = a.matmul(&a);
        // hand-computed
        assert!((ab[(0, 0)] - (c(1.0, 0.0) + c(0.0, 2.0))).norm() < 1e-14);
    }

    #[test]
    fn transpose_products_agree() {
        let mut rng = Rng::new(1);
        let a = CMat::random(4, 3, &mut rng);
        let b = CMat::random(4, 5, &mut rng);
        let direct = a.transpose().matmul(&b);
        let fused = a.t_matmul(&b);
        assert!(direct.sub(&fused).frob_norm() < 1e-13);
        let herm = a.conj_transpose().matmul(&b);
        assert!(herm.sub(&a.h_matmul(&b)).frob_norm() < 1e-13);
    }

    #[test]
    fn blocks_roundtrip() {
        let mut rng = Rng::new(2);
        let a = CMat::random(6, 5, &mut rng);
        let blk = a.sub_block(1..4, 2..5);
        let mut b = CMat::zeros(6, 5);
        b.set_block(1, 2, &blk);
        assert_eq!(b.sub_block(1..4, 2..5), blk);
    }

    #[test]
    fn empty_dims_are_fine() {
        let a = CMat::zeros(0, 4);
        let b = CMat::zeros(4, 3);
        let c = a.matmul(&b);
        assert_eq!((c.rows(), c.cols()), (0, 3));
        let d = CMat::zeros(3, 0).matmul(&CMat::zeros(0, 2));
        assert_eq!((d.rows(), d.cols()), (3, 2));
        assert!(d.frob_norm() == 0.0);
    }
}
