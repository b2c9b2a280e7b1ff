//! Column-pivoted Householder QR with an early stopping rule, used for
//! skeleton selection, plus a thin orthonormal column-space basis.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::error::Error;
use crate::la::mat::{CMat, C_ZERO};
use crate::Result;

/// Outcome of a skeletonization: the selected (global) column indices and
/// the interpolation matrix `T` with `M ≈ M[:, C] · T`.
pub struct Skeleton {
    pub cols: Vec<usize>,
    pub interp: CMat,
}

/// Rank-revealing QR by column-pivoted Householder elimination.
///
/// Stops as soon as the residual Frobenius norm drops below
/// `tol · ‖M‖_F`, or fails with `RankOverflow` if `max_rank` columns are
/// not enough to get there.
pub fn rrqr_skeleton(m: &CMat, tol: f64, max_rank: usize) -> Result<Skeleton> {
    assert!(tol > 0.0 && tol < 1.0, "relative tolerance must be in (0,1)");
    let (s, t) = (m.rows(), m.cols());
    let mut a = m.clone();
    let mut perm: Vec<usize> = (0..t).collect();
    let mut norms: Vec<f64> = (0..t).map(|j| col_norm_sq(&a, j, 0)).collect();
    let total: f64 = norms.iter().sum();
    let thresh = tol * tol * total;
    if total == 0.0 {
        return Ok(Skeleton { cols: Vec::new(), interp: CMat::zeros(0, t) });
    }
    let hard_cap = max_rank.min(s).min(t);
    let mut rank = hard_cap;
    let mut vbuf = vec![C_ZERO; s];
    for k in 0..hard_cap {
        let remaining: f64 = norms[k..].iter().sum();
        if remaining <= thresh {
            rank = k;
            break;
        }
        // pivot the column with the largest residual norm into place k
        let (mut pj, mut best) = (k, norms[k]);
        for j in k + 1..t {
            if norms[j] > best {
                best = norms[j];
                pj = j;
            }
        }
        if pj != k {
            swap_cols(&mut a, k, pj);
            norms.swap(k, pj);
            perm.swap(k, pj);
        }
        // Householder vector for column k, rows k..s
        let mut xnorm_sq = 0.0;
        for i in k..s {
            xnorm_sq += a[(i, k)].norm_sqr();
            vbuf[i] = a[(i, k)];
        }
        let xnorm = libm::sqrt(xnorm_sq);
        if xnorm == 0.0 {
            norms[k] = 0.0;
            continue;
        }
        let x0 = vbuf[k];
        let phase = if x0.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { x0 / x0.norm() };
        let sigma = phase * xnorm;
        vbuf[k] += sigma;
        let vnorm_sq = 2.0 * xnorm * (xnorm + x0.norm());
        let tau = 2.0 / vnorm_sq;
        a[(k, k)] = -sigma;
        for i in k + 1..s {
            a[(i, k)] = C_ZERO;
        }
        // apply the reflector to the trailing columns and downdate norms
        for j in k + 1..t {
            let mut dot = C_ZERO;
            for i in k..s {
                dot += vbuf[i].conj() * a[(i, j)];
            }
            let f = dot * tau;
            for i in k..s {
                let upd = f * vbuf[i];
                a[(i, j)] -= upd;
            }
            let head = a[(k, j)].norm_sqr();
            norms[j] -= head;
            if norms[j] < 1e-10 * total / t as f64 {
                norms[j] = col_norm_sq(&a, j, k + 1);
            }
        }
        norms[k] = 0.0;
        if k + 1 == hard_cap {
            let remaining: f64 = norms[k + 1..].iter().sum();
            if remaining > thresh && hard_cap < s.min(t) {
                return Err(Error::RankOverflow { cap: max_rank });
            }
            rank = hard_cap;
        }
    }
    // interpolation: solve R11 · T_piv = R12 by back substitution
    let mut interp = CMat::zeros(rank, t);
    for i in 0..rank {
        interp[(i, perm[i])] = Complex64::new(1.0, 0.0);
    }
    for j in rank..t {
        let mut col = vec![C_ZERO; rank];
        for i in 0..rank {
            col[i] = a[(i, j)];
        }
        for i in (0..rank).rev() {
            let mut v = col[i];
            for l in i + 1..rank {
                v -= a[(i, l)] * col[l];
            }
            col[i] = v / a[(i, i)];
        }
        for i in 0..rank {
            interp[(i, perm[j])] = col[i];
        }
    }
    Ok(Skeleton { cols: perm[..rank].to_vec(), interp })
}

/// Thin orthonormal basis of the column space: the first `rank` Q columns
/// of a column-pivoted QR. Used to fix the gauge in the peeling scheme.
pub fn col_space_basis(m: &CMat, rank: usize) -> CMat {
    let (s, t) = (m.rows(), m.cols());
    let r = rank.min(s).min(t);
    let mut a = m.clone();
    let mut norms: Vec<f64> = (0..t).map(|j| col_norm_sq(&a, j, 0)).collect();
    let mut vs: Vec<(Vec<Complex64>, f64, usize)> = Vec::with_capacity(r);
    for k in 0..r {
        let (mut pj, mut best) = (k, norms[k]);
        for j in k + 1..t {
            if norms[j] > best {
                best = norms[j];
                pj = j;
            }
        }
        if pj != k {
            swap_cols(&mut a, k, pj);
            norms.swap(k, pj);
        }
        let mut xnorm_sq = 0.0;
        let mut v = vec![C_ZERO; s];
        for i in k..s {
            xnorm_sq += a[(i, k)].norm_sqr();
            v[i] = a[(i, k)];
        }
        let xnorm = libm::sqrt(xnorm_sq);
        if xnorm == 0.0 {
            // rank-deficient input: extend with a canonical unit direction so
            // the basis stays orthonormal
            v[k] = Complex64::new(1.0, 0.0);
            vs.push((v, 2.0, k));
            norms[k] = 0.0;
            continue;
        }
        let x0 = v[k];
        let phase = if x0.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { x0 / x0.norm() };
        let sigma = phase * xnorm;
        v[k] += sigma;
        let tau = 2.0 / (2.0 * xnorm * (xnorm + x0.norm()));
        a[(k, k)] = -sigma;
        for i in k + 1..s {
            a[(i, k)] = C_ZERO;
        }
        for j in k + 1..t {
            let mut dot = C_ZERO;
            for i in k..s {
                dot += v[i].conj() * a[(i, j)];
            }
            let f = dot * tau;
            for i in k..s {
                let upd = f * v[i];
                a[(i, j)] -= upd;
            }
            norms[j] -= a[(k, j)].norm_sqr();
            if norms[j] < 0.0 {
                norms[j] = col_norm_sq(&a, j, k + 1);
            }
        }
        norms[k] = 0.0;
        vs.push((v, tau, k));
    }
    // q = H_0 · H_1 ⋯ H_{r-1} · [e_0 .. e_{r-1}]
    let mut q = CMat::zeros(s, r);
    for c in 0..r {
        q[(c, c)] = Complex64::new(1.0, 0.0);
    }
    for (v, tau, k) in vs.iter().rev() {
        for c in 0..r {
            let mut dot = C_ZERO;
            for i in *k..s {
                dot += v[i].conj() * q[(i, c)];
            }
            let f = dot * *tau;
            for i in *k..s {
                let upd = f * v[i];
                q[(i, c)] -= upd;
            }
        }
    }
    q
}

fn col_norm_sq(a: &CMat, j: usize, from_row: usize) -> f64 {
    let mut s = 0.0;
    for i in from_row..a.rows() {
        s += a[(i, j)].norm_sqr();
    }
    s
}

fn swap_cols(a: &mut CMat, j1: usize, j2: usize) {
    for i in 0..a.rows() {
        let t = a[(i, j1)];
        a[(i, j1)] = a[(i, j2)];
        a[(i, j2)] = t;
    }
}
