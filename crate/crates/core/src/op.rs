//! Black-box linear operators and the combinators the factorization uses
//! to express sums, products, slices and triangular-inverse compositions
//! without materializing them.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::cell::Cell;
use core::ops::Range;
use num_complex::Complex64;

use crate::butterfly::Butterfly;
use crate::la::mat::CMat;

/// Something that can multiply matrices from the left, and its transpose.
/// `apply` maps n×q to m×q; `apply_transpose` maps m×q to n×q (plain
/// transpose, no conjugation — kernels here are complex symmetric).
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &CMat) -> CMat;
    fn apply_transpose(&self, y: &CMat) -> CMat;
}

impl LinearOperator for CMat {
    fn nrows(&self) -> usize {
        self.rows()
    }
    fn ncols(&self) -> usize {
        self.cols()
    }
    fn apply(&self, x: &CMat) -> CMat {
        self.matmul(x)
    }
    fn apply_transpose(&self, y: &CMat) -> CMat {
        self.t_matmul(y)
    }
}

impl LinearOperator for Butterfly {
    fn nrows(&self) -> usize {
        self.m()
    }
    fn ncols(&self) -> usize {
        self.n()
    }
    fn apply(&self, x: &CMat) -> CMat {
        Butterfly::apply(self, x)
    }
    fn apply_transpose(&self, y: &CMat) -> CMat {
        Butterfly::apply_transpose(self, y)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn nrows(&self) -> usize {
        (**self).nrows()
    }
    fn ncols(&self) -> usize {
        (**self).ncols()
    }
    fn apply(&self, x: &CMat) -> CMat {
        (**self).apply(x)
    }
    fn apply_transpose(&self, y: &CMat) -> CMat {
        (**self).apply_transpose(y)
    }
}

/// Weighted sum Σ αᵢ·Aᵢ of conforming operators.
pub struct SumOp<'a> {
    terms: Vec<(Complex64, &'a dyn LinearOperator)>,
}

impl<'a> SumOp<'a> {
    pub fn new(terms: Vec<(Complex64, &'a dyn LinearOperator)>) -> Self {
        assert!(!terms.is_empty());
        let (m, n) = (terms[0].1.nrows(), terms[0].1.ncols());
        for (_, t) in &terms {
            assert_eq!((t.nrows(), t.ncols()), (m, n), "sum operand shapes");
        }
        SumOp { terms }
    }
}

impl LinearOperator for SumOp<'_> {
    fn nrows(&self) -> usize {
        self.terms[0].1.nrows()
    }
    fn ncols(&self) -> usize {
        self.terms[0].1.ncols()
    }
    fn apply(&self, x: &CMat) -> CMat {
        let mut acc = CMat::zeros(self.nrows(), x.cols());
        for (alpha, t) in &self.terms {
            acc.axpy(*alpha, &t.apply(x));
        }
        acc
    }
    fn apply_transpose(&self, y: &CMat) -> CMat {
        let mut acc = CMat::zeros(self.ncols(), y.cols());
        for (alpha, t) in &self.terms {
            acc.axpy(*alpha, &t.apply_transpose(y));
        }
        acc
    }
}

/// Composition A·B.
pub struct ComposeOp<'a> {
    pub left: &'a dyn LinearOperator,
    pub right: &'a dyn LinearOperator,
}

impl<'a> ComposeOp<'a> {
    pub fn new(left: &'a dyn LinearOperator, right: &'a dyn LinearOperator) -> Self {
        assert_eq!(left.ncols(), right.nrows(), "compose inner dimension");
        ComposeOp { left, right }
    }
}

impl LinearOperator for ComposeOp<'_> {
    fn nrows(&self) -> usize {
        self.left.nrows()
    }
    fn ncols(&self) -> usize {
        self.right.ncols()
    }
    fn apply(&self, x: &CMat) -> CMat {
        self.left.apply(&self.right.apply(x))
    }
    fn apply_transpose(&self, y: &CMat) -> CMat {
        self.right.apply_transpose(&self.left.apply_transpose(y))
    }
}

/// Sub-block view A[rows, cols] of another operator, applied by zero
/// extension. Structured operators provide cheaper restricted paths via
/// their own `apply_sub`; this generic view is for tests and small cases.
pub struct SliceOp<'a> {
    pub inner: &'a dyn LinearOperator,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl LinearOperator for SliceOp<'_> {
    fn nrows(&self) -> usize {
        self.rows.len()
    }
    fn ncols(&self) -> usize {
        self.cols.len()
    }
    fn apply(&self, x: &CMat) -> CMat {
        let mut wide = CMat::zeros(self.inner.ncols(), x.cols());
        wide.set_block(self.cols.start, 0, x);
        self.inner.apply(&wide).row_block(self.rows.clone())
    }
    fn apply_transpose(&self, y: &CMat) -> CMat {
        let mut tall = CMat::zeros(self.inner.nrows(), y.cols());
        tall.set_block(self.rows.start, 0, y);
        self.inner.apply_transpose(&tall).row_block(self.cols.clone())
    }
}

/// Counts forward and transpose applies (by column, and by call).
pub struct CountingOp<'a> {
    pub inner: &'a dyn LinearOperator,
    forward_cols: Cell<u64>,
    transpose_cols: Cell<u64>,
    forward_calls: Cell<u64>,
    transpose_calls: Cell<u64>,
}

impl<'a> CountingOp<'a> {
    pub fn new(inner: &'a dyn LinearOperator) -> Self {
        CountingOp {
            inner,
            forward_cols: Cell::new(0),
            transpose_cols: Cell::new(0),
            forward_calls: Cell::new(0),
            transpose_calls: Cell::new(0),
        }
    }

    pub fn forward_count(&self) -> u64 {
        self.forward_cols.get()
    }

    pub fn transpose_count(&self) -> u64 {
        self.transpose_cols.get()
    }

    pub fn call_counts(&self) -> (u64, u64) {
        (self.forward_calls.get(), self.transpose_calls.get())
    }
}

impl LinearOperator for CountingOp<'_> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }
    fn ncols(&self) -> usize {
        self.inner.ncols()
    }
    fn apply(&self, x: &CMat) -> CMat {
        self.forward_cols.set(self.forward_cols.get() + x.cols() as u64);
        self.forward_calls.set(self.forward_calls.get() + 1);
        self.inner.apply(x)
    }
    fn apply_transpose(&self, y: &CMat) -> CMat {
        self.transpose_cols.set(self.transpose_cols.get() + y.cols() as u64);
        self.transpose_calls.set(self.transpose_calls.get() + 1);
        self.inner.apply_transpose(y)
    }
}

/// Owned boxed operator for cases where composition must outlive a scope.
pub struct BoxedOp {
    pub m: usize,
    pub n: usize,
    pub fwd: Box<dyn Fn(&CMat) -> CMat>,
    pub tr: Box<dyn Fn(&CMat) -> CMat>,
}

impl LinearOperator for BoxedOp {
    fn nrows(&self) -> usize {
        self.m
    }
    fn ncols(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &CMat) -> CMat {
        (self.fwd)(x)
    }
    fn apply_transpose(&self, y: &CMat) -> CMat {
        (self.tr)(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn combinators_match_dense_algebra() {
        let mut rng = Rng::new(31);
        let a = CMat::random(7, 5, &mut rng);
        let b = CMat::random(7, 5, &mut rng);
        let c = CMat::random(5, 6, &mut rng);
        let x = CMat::random(6, 2, &mut rng);
        let sum = SumOp::new(alloc::vec![
            (Complex64::new(1.0, 0.0), &a as &dyn LinearOperator),
            (Complex64::new(-2.0, 0.0), &b as &dyn LinearOperator),
        ]);
        let comp = ComposeOp::new(&sum, &c);
        let got = comp.apply(&x);
        let mut dense = a.clone();
        dense.axpy(Complex64::new(-2.0, 0.0), &b);
        let want = dense.matmul(&c).matmul(&x);
        assert!(got.sub(&want).frob_norm() < 1e-12);
        let y = CMat::random(7, 2, &mut rng);
        let got_t = comp.apply_transpose(&y);
        let want_t = dense.matmul(&c).t_matmul(&y);
        assert!(got_t.sub(&want_t).frob_norm() < 1e-12);
    }

    #[test]
    fn slice_and_counting() {
        let mut rng = Rng::new(32);
        let a = CMat::random(9, 8, &mut rng);
        let counting = CountingOp::new(&a);
        let slice = SliceOp { inner: &counting, rows: 2..7, cols: 1..5 };
        let x = CMat::random(4, 3, &mut rng);
        let got = slice.apply(&x);
        let want = a.sub_block(2..7, 1..5).matmul(&x);
        assert!(got.sub(&want).frob_norm() < 1e-12);
        assert_eq!(counting.forward_count(), 3);
        assert_eq!(counting.call_counts(), (1, 0));
    }
}
