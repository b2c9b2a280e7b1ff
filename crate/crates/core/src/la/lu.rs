//! Dense LU with partial pivoting for diagonal leaf blocks.
//!
//! Pivots stay inside the leaf, so the factor exposed to the block
//! structure is `L̂ = Pᵀ·L` (forward-solvable, not literally triangular)
//! together with the upper factor `U`: `A = L̂·U`.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Error;
use crate::la::mat::CMat;
use crate::Result;

#[derive(Clone, Debug)]
pub struct DenseLu {
    lu: CMat,
    ipiv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(mut a: CMat) -> Result<DenseLu> {
        assert_eq!(a.rows(), a.cols(), "LU needs a square block");
        let n = a.rows();
        let mut ipiv = Vec::with_capacity(n);
        let mut pivot_row = alloc::vec![crate::la::mat::C_ZERO; n];
        let scale = a.max_abs();
        for k in 0..n {
            // partial pivot: largest magnitude in column k at or below row k
            let mut p = k;
            let mut best = a[(k, k)].norm_sqr();
            for i in k + 1..n {
                let v = a[(i, k)].norm_sqr();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            ipiv.push(p);
            if p != k {
                for j in 0..n {
                    let t = a[(k, j)];
                    a[(k, j)] = a[(p, j)];
                    a[(p, j)] = t;
                }
            }
            let akk = a[(k, k)];
            if akk.norm() <= f64::EPSILON * scale.max(1e-300) {
                return Err(Error::SingularBlock {
                    description: String::from("zero pivot in dense leaf LU"),
                });
            }
            let inv = akk.inv();
            pivot_row[k + 1..n].copy_from_slice(&a.row(k)[k + 1..n]);
            for i in k + 1..n {
                let lik = a[(i, k)] * inv;
                a[(i, k)] = lik;
                if lik.re == 0.0 && lik.im == 0.0 {
                    continue;
                }
                let row_i = &mut a.row_mut(i)[k + 1..n];
                for (d, &s) in row_i.iter_mut().zip(&pivot_row[k + 1..n]) {
                    *d -= lik * s;
                }
            }
        }
        Ok(DenseLu { lu: a, ipiv })
    }

    pub fn n(&self) -> usize {
        self.lu.rows()
    }

    pub fn entry_count(&self) -> usize {
        self.lu.entry_count()
    }

    fn perm_fwd(&self, b: &mut CMat) {
        for (i, &p) in self.ipiv.iter().enumerate() {
            if p != i {
                for j in 0..b.cols() {
                    let t = b[(i, j)];
                    b[(i, j)] = b[(p, j)];
                    b[(p, j)] = t;
                }
            }
        }
    }

    fn perm_inv(&self, b: &mut CMat) {
        for i in (0..self.ipiv.len()).rev() {
            let p = self.ipiv[i];
            if p != i {
                for j in 0..b.cols() {
                    let t = b[(i, j)];
                    b[(i, j)] = b[(p, j)];
                    b[(p, j)] = t;
                }
            }
        }
    }

    /// y = L̂⁻¹ b  (forward substitution through the pivoted lower factor)
    pub fn lower_inv(&self, b: &CMat) -> CMat {
        let mut x = b.clone();
        self.perm_fwd(&mut x);
        let n = self.n();
        for i in 1..n {
            for k in 0..i {
                let lik = self.lu[(i, k)];
                if lik.re == 0.0 && lik.im == 0.0 {
                    continue;
                }
                for j in 0..x.cols() {
                    let update = lik * x[(k, j)];
                    x[(i, j)] -= update;
                }
            }
        }
        x
    }

    /// y = L̂⁻ᵀ b
    pub fn lower_inv_t(&self, b: &CMat) -> CMat {
        let mut x = b.clone();
        let n = self.n();
        for i in (0..n).rev() {
            for k in i + 1..n {
                let lki = self.lu[(k, i)];
                if lki.re == 0.0 && lki.im == 0.0 {
                    continue;
                }
                for j in 0..x.cols() {
                    let update = lki * x[(k, j)];
                    x[(i, j)] -= update;
                }
            }
        }
        self.perm_inv(&mut x);
        x
    }

    /// y = L̂ b
    pub fn lower_apply(&self, b: &CMat) -> CMat {
        let mut x = b.clone();
        let n = self.n();
        for i in (1..n).rev() {
            for k in 0..i {
                let lik = self.lu[(i, k)];
                for j in 0..x.cols() {
                    let update = lik * x[(k, j)];
                    x[(i, j)] += update;
                }
            }
        }
        self.perm_inv(&mut x);
        x
    }

    /// y = L̂ᵀ b
    pub fn lower_apply_t(&self, b: &CMat) -> CMat {
        let mut x = b.clone();
        self.perm_fwd(&mut x);
        let n = self.n();
        for i in 0..n {
            for k in i + 1..n {
                let lki = self.lu[(k, i)];
                for j in 0..x.cols() {
                    let update = lki * x[(k, j)];
                    x[(i, j)] += update;
                }
            }
        }
        x
    }

    /// y = U⁻¹ b  (back substitution)
    pub fn upper_inv(&self, b: &CMat) -> CMat {
        let mut x = b.clone();
        let n = self.n();
        for i in (0..n).rev() {
            for k in i + 1..n {
                let uik = self.lu[(i, k)];
                if uik.re == 0.0 && uik.im == 0.0 {
                    continue;
                }
                for j in 0..x.cols() {
                    let update = uik * x[(k, j)];
                    x[(i, j)] -= update;
                }
            }
            let inv = self.lu[(i, i)].inv();
            for j in 0..x.cols() {
                x[(i, j)] *= inv;
            }
        }
        x
    }

    /// y = U⁻ᵀ b
    pub fn upper_inv_t(&self, b: &CMat) -> CMat {
        let mut x = b.clone();
        let n = self.n();
        for i in 0..n {
            for k in 0..i {
                let uki = self.lu[(k, i)];
                if uki.re == 0.0 && uki.im == 0.0 {
                    continue;
                }
                for j in 0..x.cols() {
                    let update = uki * x[(k, j)];
                    x[(i, j)] -= update;
                }
            }
            let inv = self.lu[(i, i)].inv();
            for j in 0..x.cols() {
                x[(i, j)] *= inv;
            }
        }
        x
    }

    /// y = U b
    pub fn upper_apply(&self, b: &CMat) -> CMat {
        let n = self.n();
        let mut x = CMat::zeros(n, b.cols());
        for i in 0..n {
            for k in i..n {
                let uik = self.lu[(i, k)];
                for j in 0..b.cols() {
                    let update = uik * b[(k, j)];
                    x[(i, j)] += update;
                }
            }
        }
        x
    }

    /// y = Uᵀ b
    pub fn upper_apply_t(&self, b: &CMat) -> CMat {
        let n = self.n();
        let mut x = CMat::zeros(n, b.cols());
        for i in 0..n {
            for k in 0..=i {
                let uki = self.lu[(k, i)];
                for j in 0..b.cols() {
                    let update = uki * b[(k, j)];
                    x[(i, j)] += update;
                }
            }
        }
        x
    }

    /// A x = b
    pub fn solve(&self, b: &CMat) -> CMat {
        self.upper_inv(&self.lower_inv(b))
    }

    /// Aᵀ x = b
    pub fn solve_t(&self, b: &CMat) -> CMat {
        self.lower_inv_t(&self.upper_inv_t(b))
    }

    /// A b (recompose the product, used for probe checks)
    pub fn apply(&self, b: &CMat) -> CMat {
        self.lower_apply(&self.upper_apply(b))
    }

    pub fn apply_t(&self, b: &CMat) -> CMat {
        self.upper_apply_t(&self.lower_apply_t(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn solve_manufactured() {
        let mut rng = Rng::new(11);
        let a = CMat::random(20, 20, &mut rng);
        let x_true = CMat::random(20, 3, &mut rng);
        let b = a.matmul(&x_true);
        let f = DenseLu::factor(a.clone()).unwrap();
        let x = f.solve(&b);
        assert!(x.sub(&x_true).frob_norm() / x_true.frob_norm() < 1e-12);
        // transpose solve
        let bt = a.transpose().matmul(&x_true);
        let xt = f.solve_t(&bt);
        assert!(xt.sub(&x_true).frob_norm() / x_true.frob_norm() < 1e-12);
    }

    #[test]
    fn factors_recompose() {
        let mut rng = Rng::new(12);
        let a = CMat::random(15, 15, &mut rng);
        let f = DenseLu::factor(a.clone()).unwrap();
        let b = CMat::random(15, 4, &mut rng);
        let via_factors = f.apply(&b);
        let direct = a.matmul(&b);
        assert!(via_factors.sub(&direct).frob_norm() / direct.frob_norm() < 1e-12);
        let via_t = f.apply_t(&b);
        let direct_t = a.transpose().matmul(&b);
        assert!(via_t.sub(&direct_t).frob_norm() / direct_t.frob_norm() < 1e-12);
    }

    #[test]
    fn lower_upper_inverses() {
        let mut rng = Rng::new(13);
        let a = CMat::random(12, 12, &mut rng);
        let f = DenseLu::factor(a).unwrap();
        let b = CMat::random(12, 5, &mut rng);
        let id1 = f.lower_inv(&f.lower_apply(&b));
        assert!(id1.sub(&b).frob_norm() < 1e-11);
        let id2 = f.upper_apply(&f.upper_inv(&b));
        assert!(id2.sub(&b).frob_norm() < 1e-11);
        let id3 = f.lower_inv_t(&f.lower_apply_t(&b));
        assert!(id3.sub(&b).frob_norm() < 1e-11);
        let id4 = f.upper_inv_t(&f.upper_apply_t(&b));
        assert!(id4.sub(&b).frob_norm() < 1e-11);
    }

    #[test]
    fn singular_detected() {
        let a = CMat::zeros(4, 4);
        assert!(matches!(DenseLu::factor(a), Err(Error::SingularBlock { .. })));
    }
}
