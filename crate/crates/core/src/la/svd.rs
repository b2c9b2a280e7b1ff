//! One-sided Jacobi SVD and the truncated Moore-Penrose pseudoinverse.
//!
//! Blocks passed through here are at most a few hundred on a side, where
//! Jacobi is plenty fast and delivers high relative accuracy.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::la::mat::CMat;

pub struct Svd {
    pub u: CMat,
    pub sigma: Vec<f64>,
    pub v: CMat,
}

/// Full thin SVD: `m = u · diag(sigma) · vᴴ`.
pub fn svd(m: &CMat) -> Svd {
    if m.rows() >= m.cols() {
        svd_tall(m)
    } else {
        let t = svd_tall(&m.conj_transpose());
        Svd { u: t.v, sigma: t.sigma, v: t.u }
    }
}

fn svd_tall(m: &CMat) -> Svd {
    let n = m.cols();
    let mut a = m.clone();
    let mut v = CMat::identity(n);
    let eps = 1e-14;
    for _sweep in 0..40 {
        let mut max_off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let (mut app, mut aqq) = (0.0, 0.0);
                let mut apq = Complex64::new(0.0, 0.0);
                for i in 0..a.rows() {
                    let x = a[(i, p)];
                    let y = a[(i, q)];
                    app += x.norm_sqr();
                    aqq += y.norm_sqr();
                    apq += x.conj() * y;
                }
                let g = apq.norm();
                if app == 0.0 || aqq == 0.0 || g <= eps * libm::sqrt(app * aqq) {
                    continue;
                }
                let rel = g / libm::sqrt(app * aqq);
                if rel > max_off {
                    max_off = rel;
                }
                let alpha_conj = (apq / g).conj();
                let zeta = (aqq - app) / (2.0 * g);
                let t = {
                    let s = if zeta >= 0.0 { 1.0 } else { -1.0 };
                    s / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta))
                };
                let cs = 1.0 / libm::sqrt(1.0 + t * t);
                let sn = cs * t;
                rotate_cols(&mut a, p, q, cs, sn, alpha_conj);
                rotate_cols(&mut v, p, q, cs, sn, alpha_conj);
            }
        }
        if max_off < eps {
            break;
        }
    }
    // column norms are the singular values; sort descending
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|j| {
            let mut s = 0.0;
            for i in 0..a.rows() {
                s += a[(i, j)].norm_sqr();
            }
            libm::sqrt(s)
        })
        .collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());
    let mut u = CMat::zeros(a.rows(), n);
    let mut vv = CMat::zeros(n, n);
    let mut sigma = vec![0.0; n];
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        if norms[src] > 0.0 {
            let inv = 1.0 / norms[src];
            for i in 0..a.rows() {
                u[(i, dst)] = a[(i, src)] * inv;
            }
        }
        for i in 0..n {
            vv[(i, dst)] = v[(i, src)];
        }
    }
    Svd { u, sigma, v: vv }
}

#[inline]
fn rotate_cols(a: &mut CMat, p: usize, q: usize, cs: f64, sn: f64, alpha_conj: Complex64) {
    for i in 0..a.rows() {
        let x = a[(i, p)];
        let y = a[(i, q)] * alpha_conj;
        a[(i, p)] = x * cs - y * sn;
        a[(i, q)] = x * sn + y * cs;
    }
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    svd(m).sigma
}

/// Truncated-singular-value Moore-Penrose pseudoinverse: singular values
/// below `tol · σ_max` are treated as zero.
pub fn pinv_trunc(m: &CMat, tol: f64) -> CMat {
    if m.rows() == 0 || m.cols() == 0 {
        return CMat::zeros(m.cols(), m.rows());
    }
    let Svd { u, sigma, v } = svd(m);
    let smax = sigma.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return CMat::zeros(m.cols(), m.rows());
    }
    let cut = tol * smax;
    // pinv = v · diag(1/σ) · uᴴ
    let mut vs = v;
    let mut kept = 0;
    for (j, &s) in sigma.iter().enumerate() {
        let f = if s > cut {
            kept += 1;
            1.0 / s
        } else {
            0.0
        };
        for i in 0..vs.rows() {
            vs[(i, j)] *= f;
        }
    }
    let _ = kept;
    vs.matmul(&u.conj_transpose())
}

/// Eigendecomposition of a Hermitian matrix by two-sided Jacobi:
/// `h = q · diag(λ) · qᴴ` with real eigenvalues sorted descending.
pub fn eigh(h: &CMat) -> (Vec<f64>, CMat) {
    let n = h.rows();
    assert_eq!(n, h.cols());
    let mut a = h.clone();
    let mut q = CMat::identity(n);
    let eps = 1e-14;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        let mut diag = 0.0f64;
        for i in 0..n {
            diag += a[(i, i)].norm_sqr();
            for j in i + 1..n {
                off += a[(i, j)].norm_sqr();
            }
        }
        if off <= eps * eps * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apr = a[(p, r)];
                if apr.norm() <= 1e-300 {
                    continue;
                }
                let app = a[(p, p)].re;
                let arr = a[(r, r)].re;
                let alpha_conj = (apr / apr.norm()).conj();
                let zeta = (arr - app) / (2.0 * apr.norm());
                let t = {
                    let sg = if zeta >= 0.0 { 1.0 } else { -1.0 };
                    sg / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta))
                };
                let cs = 1.0 / libm::sqrt(1.0 + t * t);
                let sn = cs * t;
                // two-sided rotation: A ← Jᴴ A J, Q ← Q J
                for i in 0..n {
                    let x = a[(i, p)];
                    let y = a[(i, r)] * alpha_conj;
                    a[(i, p)] = x * cs - y * sn;
                    a[(i, r)] = x * sn + y * cs;
                    let qx = q[(i, p)];
                    let qy = q[(i, r)] * alpha_conj;
                    q[(i, p)] = qx * cs - qy * sn;
                    q[(i, r)] = qx * sn + qy * cs;
                }
                for j in 0..n {
                    let x = a[(p, j)];
                    let y = a[(r, j)] * alpha_conj.conj();
                    a[(p, j)] = x * cs - y * sn;
                    a[(r, j)] = x * sn + y * cs;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let eigs: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    order.sort_by(|&x, &y| eigs[y].partial_cmp(&eigs[x]).unwrap());
    let mut lam = vec![0.0; n];
    let mut qs = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        lam[dst] = eigs[src];
        for i in 0..n {
            qs[(i, dst)] = q[(i, src)];
        }
    }
    (lam, qs)
}

/// Pseudoinverse with an absolute singular-value cutoff (for callers that
/// truncate against a scale established across many blocks).
pub fn pinv_trunc_abs(m: &CMat, cutoff: f64) -> CMat {
    if m.rows() == 0 || m.cols() == 0 {
        return CMat::zeros(m.cols(), m.rows());
    }
    let Svd { u, sigma, v } = svd(m);
    let mut vs = v;
    for (j, &s) in sigma.iter().enumerate() {
        let f = if s > cutoff { 1.0 / s } else { 0.0 };
        for i in 0..vs.rows() {
            vs[(i, j)] *= f;
        }
    }
    vs.matmul(&u.conj_transpose())
}

/// Absolute-cutoff pseudoinverse plus the fraction of values dropped.
pub fn pinv_trunc_abs_with_drop(m: &CMat, cutoff: f64) -> (CMat, f64) {
    if m.rows() == 0 || m.cols() == 0 {
        return (CMat::zeros(m.cols(), m.rows()), 0.0);
    }
    let Svd { u, sigma, v } = svd(m);
    let dropped = sigma.iter().filter(|&&s| s <= cutoff).count();
    let frac = dropped as f64 / sigma.len().max(1) as f64;
    let mut vs = v;
    for (j, &s) in sigma.iter().enumerate() {
        let f = if s > cutoff { 1.0 / s } else { 0.0 };
        for i in 0..vs.rows() {
            vs[(i, j)] *= f;
        }
    }
    (vs.matmul(&u.conj_transpose()), frac)
}

/// Largest singular value (0 for empty blocks).
pub fn sigma_max(m: &CMat) -> f64 {
    if m.rows() == 0 || m.cols() == 0 {
        return 0.0;
    }
    svd(m).sigma.first().copied().unwrap_or(0.0)
}

/// Count of singular values above an absolute cutoff.
pub fn numerical_rank(m: &CMat, cutoff: f64) -> usize {
    if m.rows() == 0 || m.cols() == 0 {
        return 0;
    }
    svd(m).sigma.iter().filter(|&&s| s > cutoff).count()
}

/// Fraction of singular values that fell below the truncation cutoff.
pub fn pinv_trunc_with_drop(m: &CMat, tol: f64) -> (CMat, f64) {
    if m.rows() == 0 || m.cols() == 0 {
        return (CMat::zeros(m.cols(), m.rows()), 0.0);
    }
    let Svd { u, sigma, v } = svd(m);
    let smax = sigma.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return (CMat::zeros(m.cols(), m.rows()), 1.0);
    }
    let cut = tol * smax;
    let dropped = sigma.iter().filter(|&&s| s <= cut).count();
    let frac = dropped as f64 / sigma.len() as f64;
    let mut vs = v;
    for (j, &s) in sigma.iter().enumerate() {
        let f = if s > cut { 1.0 / s } else { 0.0 };
        for i in 0..vs.rows() {
            vs[(i, j)] *= f;
        }
    }
    (vs.matmul(&u.conj_transpose()), frac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn diagonal_pinv() {
        let mut m = CMat::zeros(2, 2);
        m[(0, 0)] = Complex64::new(2.0, 0.0);
        let p = pinv_trunc(&m, 1e-12);
        assert!((p[(0, 0)] - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        assert!(p[(1, 1)].norm() < 1e-14);
    }

    #[test]
    fn full_column_rank_left_inverse() {
        let mut rng = Rng::new(21);
        let m = CMat::random(6, 4, &mut rng);
        let p = pinv_trunc(&m, 1e-12);
        let id = p.matmul(&m);
        assert!(id.sub(&CMat::identity(4)).frob_norm() < 1e-10);
    }

    #[test]
    fn moore_penrose_on_rank_deficient() {
        let mut rng = Rng::new(22);
        let a = CMat::random(5, 2, &mut rng);
        let b = CMat::random(2, 5, &mut rng);
        let m = a.matmul(&b); // rank 2, 5x5
        let p = pinv_trunc(&m, 1e-10);
        let mpm = m.matmul(&p).matmul(&m);
        assert!(mpm.sub(&m).frob_norm() <= 1e-9 * m.frob_norm());
        let pmp = p.matmul(&m).matmul(&p);
        assert!(pmp.sub(&p).frob_norm() <= 1e-9 * p.frob_norm());
    }

    #[test]
    fn zero_matrix_pinv_is_zero() {
        let p = pinv_trunc(&CMat::zeros(3, 7), 1e-12);
        assert_eq!((p.rows(), p.cols()), (7, 3));
        assert_eq!(p.frob_norm(), 0.0);
    }

    #[test]
    fn svd_reconstructs() {
        let mut rng = Rng::new(23);
        for &(r, c) in &[(8usize, 5usize), (5, 8), (6, 6)] {
            let m = CMat::random(r, c, &mut rng);
            let Svd { u, sigma, v } = svd(&m);
            let mut us = u.clone();
            for j in 0..sigma.len() {
                for i in 0..us.rows() {
                    us[(i, j)] *= sigma[j];
                }
            }
            let back = us.matmul(&v.conj_transpose());
            assert!(back.sub(&m).frob_norm() <= 1e-11 * m.frob_norm(), "{r}x{c}");
        }
    }
}
