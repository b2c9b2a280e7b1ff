//! Iterative randomized reconstruction: recover the outer projections from
//! one sketch, then sweep the interior factors from the outside in. A
//! sweep merges adjacent factor levels, solves each merged group against
//! the nearer sketch by least squares, and re-splits with one SVD per
//! intermediate pair; the right half-sweep owns the upper levels, the
//! left half-sweep the lower ones, and they overlap one level past the
//! middle. Sweeps repeat until the sketch residual ratio reaches the
//! target. The sketch is the only operator data used; sweeps never apply
//! the operator again.
//!
//! Convergence is an empirical matter (fast for modest level counts,
//! typically one or two sweeps up to three levels); when the sweeps fail
//! to reach the tolerance the caller is expected to fall back to the
//! non-iterative peeling scheme.

use alloc::vec::Vec;

use super::{low_rank_core, projections_with_bars, with_counted_op, ReconstructionReport, Scaffold, Scheme};
use crate::butterfly::Butterfly;
use crate::error::Error;
use crate::la::mat::CMat;
use crate::la::svd::pinv_trunc;
use crate::op::LinearOperator;
use crate::rng::Rng;
use crate::sketch::{draw_sketch, SketchData};
use crate::Result;

const PINV_TOL: f64 = 1e-12;

/// Reconstruct an `levels`-level butterfly from `op` with imposed rank `r`
/// and oversampling `c`, sweeping until the sketch residual drops below
/// `eps` or `max_iter` sweeps have run. The probe count is
/// `n_rnd = (levels+1)·r + c` on each side; sweeps reuse the sketch and
/// never touch the operator again.
pub fn reconstruct_iterative(
    op: &dyn LinearOperator,
    levels: usize,
    r: usize,
    c: usize,
    eps: f64,
    max_iter: usize,
    seed: u64,
) -> Result<(Butterfly, ReconstructionReport)> {
    let n_rnd = (levels + 1) * r + c;
    let ((bf, mut report), fwd, tr) = with_counted_op(op, |counted| {
        let sketch = draw_sketch(counted, n_rnd, seed)?;
        let data = SketchData::from_sketch(&sketch);
        iterative_from_sketch(
            counted.nrows(),
            counted.ncols(),
            levels,
            r,
            eps,
            max_iter,
            seed,
            &data,
        )
    })?;
    report.forward_applies = fwd;
    report.transpose_applies = tr;
    report.n_rnd = n_rnd;
    Ok((bf, report))
}

/// Sweep-based recovery from captured sketch responses.
#[allow(clippy::too_many_arguments)]
pub(crate) fn iterative_from_sketch(
    m: usize,
    n: usize,
    levels: usize,
    r: usize,
    eps: f64,
    max_iter: usize,
    seed: u64,
    data: &SketchData,
) -> Result<(Butterfly, ReconstructionReport)> {
    let mut report = ReconstructionReport {
        scheme: Scheme::Iterative,
        k_iter: 1,
        residual: 0.0,
        forward_applies: 0,
        transpose_applies: 0,
        n_rnd: data.u_r.cols(),
        rank_used: r,
        residual_history: Vec::new(),
    };
    // zero operator: nothing to recover
    if data.u_r.frob_norm() == 0.0 && data.u_lt.frob_norm() == 0.0 {
        return Ok((Butterfly::zero(m, n, levels), report));
    }
    if levels == 0 {
        let bf = low_rank_core(m, n, r, data, seed, PINV_TOL)?;
        let den = data.u_r.frob_norm() + data.u_lt.frob_norm();
        let res = (bf.apply(&data.v_r).sub(&data.u_r).frob_norm()
            + bf.apply_transpose(&data.v_lt).sub(&data.u_lt).frob_norm())
            / den;
        report.residual = res;
        report.residual_history.push(res);
        return Ok((bf, report));
    }

    // directions far below the requested accuracy are trimmed away; they
    // cannot help the fit but they wreck the conditioning of the sweeps
    // all internal truncations track the requested accuracy: directions
    // far below eps cannot help the fit but destroy the conditioning of
    // the projections, strips and the middle join
    let rank_cut = (eps * 1e-2).clamp(1e-12, 1e-4);
    let strip_rel = PINV_TOL;
    let ranks = super::effective_ranks(m, n, levels, r, &data.u_r, &data.u_lt, rank_cut);
    let mut sc = Scaffold::with_ranks(m, n, levels, ranks);
    sc.mid_cap = r;
    let (p, q, bar_r, bar_lt) = projections_with_bars(
        data,
        m,
        n,
        levels,
        &sc.ranks[levels],
        &sc.ranks[0],
        seed.wrapping_add(0xA),
        PINV_TOL,
    )?;
    sc.p = p;
    sc.q = q;
    // random starting interior factors; rows orthonormalized so the very
    // first partial products stay well conditioned
    let rng = Rng::new(seed.wrapping_add(0xB));
    for d in 1..=levels {
        let mut lvl = Vec::with_capacity(sc.groups());
        for g in 0..sc.groups() {
            let (p0, p1, c0) = sc.group_pairs(d, g);
            let rows = sc.ranks[d][p0] + sc.ranks[d][p1];
            let cols = sc.ranks[d - 1][c0] + sc.ranks[d - 1][c0 + 1];
            let raw = CMat::random(cols, rows, &mut rng.derive(((d as u64) << 32) | g as u64));
            let blk = if rows <= cols {
                crate::la::qr::col_space_basis(&raw, rows).transpose()
            } else {
                raw.transpose()
            };
            lvl.push(blk);
        }
        sc.grouped[d - 1] = lvl;
    }

    let state0 = sc.apply_q(&data.v_r); // U_R^0
    let state_l = sc.apply_pt(&data.v_lt); // (U_L^0)ᵀ
    let den = bar_r.frob_norm() + bar_lt.frob_norm();
    let mut residual = f64::INFINITY;
    for sweep in 1..=max_iter {
        report.k_iter = sweep;
        if levels == 1 {
            // single factor: fit it against the right data, then the left
            let in_r = &state0;
            for g in 0..sc.groups() {
                let (p0, p1, c0) = sc.group_pairs(1, g);
                let target = sc.gather_pairs(&bar_r, 1, p0, p1);
                let input = in_r.row_block(sc.offsets[0][c0]..sc.offsets[0][c0 + 2]);
                sc.grouped[0][g] = target.matmul(&pinv_trunc(&input, PINV_TOL));
            }
            let in_lt = &state_l;
            for g in 0..sc.groups() {
                let (p0, p1, c0) = sc.group_pairs(1, g);
                let target = bar_lt.row_block(sc.offsets[0][c0]..sc.offsets[0][c0 + 2]);
                let input = sc.gather_pairs(in_lt, 1, p0, p1);
                let right_fit = &sc.grouped[0][g];
                // blend of the two one-sided fits keeps both residuals small
                let left_fit = target.matmul(&pinv_trunc(&input, PINV_TOL)).transpose();
                let mut avg = right_fit.clone();
                avg.axpy(num_complex::Complex64::new(1.0, 0.0), &left_fit);
                avg.scale(num_complex::Complex64::new(0.5, 0.0));
                sc.grouped[0][g] = avg;
            }
        } else {
            // two-site sweeps: adjacent level pairs are merged, solved
            // against the nearer sketch, and re-split by per-tile SVD
            // (tiles are disjoint, so the split is local and adapts each
            // intermediate rank to the data). The right half-sweep owns
            // the upper levels, the left half-sweep the lower ones, and
            // they overlap one level past the middle.
            // the right half-sweep owns the upper levels, the left
            // half-sweep the lower ones; they overlap one level past the
            // middle, and that seam merge is solved against both sketches
            // at once so the halves weld instead of mutually overfitting
            let mid = levels / 2;
            let mut t_r = bar_r.clone();
            let right_lowest = if levels == 2 { 2 } else { mid + 2 };
            for d in (right_lowest..=levels).rev() {
                let c_r = sc.right_chain(&state0, d - 2);
                sc.two_site_right(&t_r, &c_r, d, rank_cut);
                if d > right_lowest {
                    t_r = sc.strip_step_right(&t_r, d, strip_rel);
                }
            }
            let mut t_lt = bar_lt.clone();
            for e in 2..=(mid + 1).min(levels) {
                sc.two_site_left(&t_lt, &state_l, e, rank_cut);
                if e < mid + 1 {
                    t_lt = sc.strip_step_left(&t_lt, e - 1, strip_rel);
                }
            }
        }
        let res_r = sc.right_chain(&state0, levels).sub(&bar_r).frob_norm();
        let res_l = sc.left_chain_t(&state_l, 0).sub(&bar_lt).frob_norm();
        residual = if den == 0.0 { 0.0 } else { (res_r + res_l) / den };
        report.residual_history.push(residual);
        if residual <= eps {
            break;
        }
    }
    report.residual = residual;
    if residual > eps {
        return Err(Error::NonConvergence { iterations: report.k_iter, residual });
    }
    Ok((sc.into_butterfly(), report))
}

impl Scaffold {
    /// Merge the adjacent factor levels (d, d-1) and solve the merged
    /// block of every group against both sketches at once:
    ///   minimize ‖M·C − T_r‖² + ‖Mᵀ·V − T_l‖²
    /// whose normal equations `M·(CCᴴ) + (V̄Vᵀ)·M = T_rCᴴ + V̄T_lᵀ` are a
    /// small Sylvester system solved through two Hermitian
    /// eigendecompositions. The merged block is then split back into the
    /// two factors by one SVD per intermediate pair; the four
    /// intermediates of a group own disjoint tiles of the merged block,
    /// so the split is local and adapts each intermediate rank.
    ///
    /// `t_r`: right data in level-d layout; `c_r`: right chain state in
    /// level-(d-2) layout; `v_d`: transposed left chain in level-d
    /// layout; `t_l`: left data stripped to level-(d-2) layout.
    fn two_site_right(&mut self, t_r: &CMat, c_r: &CMat, d: usize, cut_rel: f64) {
        let zero_v = CMat::zeros(self.state_len(d), 1);
        let zero_b = CMat::zeros(self.state_len(d - 2), 1);
        self.two_site_joint(t_r, c_r, &zero_v, &zero_b, d, cut_rel, 1.0, 0.0);
    }

    /// Left-data merge of levels (e-1, e): the transposed system
    /// `t_lt = Mᵀ·in_lt` feeds the same joint machinery.
    fn two_site_left(&mut self, t_lt: &CMat, state_l: &CMat, e: usize, cut_rel: f64) {
        let in_lt = self.left_chain_t(state_l, e);
        let zero_t = CMat::zeros(self.state_len(e), 1);
        let zero_c = CMat::zeros(self.state_len(e - 2), 1);
        self.two_site_joint(&zero_t, &zero_c, &in_lt, t_lt, e, cut_rel, 0.0, 1.0);
    }

    #[allow(clippy::too_many_arguments)]
    fn two_site_joint(
        &mut self,
        t_r: &CMat,
        c_r: &CMat,
        v_d: &CMat,
        t_l: &CMat,
        d: usize,
        cut_rel: f64,
        w_r: f64,
        w_l: f64,
    ) {
        let srcs = self.levels - d;
        let merged_groups = (1usize << self.levels) / 4;
        let mut new_mid_ranks = self.ranks[d - 1].clone();
        for mg in 0..merged_groups {
            let jp = mg >> srcs;
            let k = mg & ((1 << srcs) - 1);
            let outs: [usize; 4] = core::array::from_fn(|t4| self.pair(d, 4 * jp + t4, k));
            let gather4 = |state: &CMat, level: usize, ids: &[usize]| -> CMat {
                let blocks: Vec<CMat> = ids
                    .iter()
                    .map(|&p| {
                        state.row_block(
                            self.offsets[level][p]..self.offsets[level][p] + self.ranks[level][p],
                        )
                    })
                    .collect();
                CMat::vstack(&blocks.iter().collect::<Vec<_>>())
            };
            let a = gather4(t_r, d, &outs);
            let v = gather4(v_d, d, &outs);
            let c0 = self.pair(d - 2, jp, 4 * k);
            let c = c_r.row_block(self.offsets[d - 2][c0]..self.offsets[d - 2][c0 + 4]);
            let b = t_l.row_block(self.offsets[d - 2][c0]..self.offsets[d - 2][c0 + 4]);
            // normal-equation pieces, side-weighted
            let wr2 = num_complex::Complex64::new(w_r * w_r, 0.0);
            let wl2 = num_complex::Complex64::new(w_l * w_l, 0.0);
            let mut hp = c.matmul(&c.conj_transpose()); // S×S
            hp.scale(wr2);
            let hq = {
                // V̄Vᵀ = conj(V·Vᴴ)
                let vvh = v.matmul(&v.conj_transpose());
                let mut conj = vvh.clone();
                for i in 0..conj.rows() {
                    for j in 0..conj.cols() {
                        conj[(i, j)] = vvh[(i, j)].conj();
                    }
                }
                conj.scale(wl2);
                conj
            };
            let mut rhs = a.matmul(&c.conj_transpose()); // R×S
            rhs.scale(wr2);
            {
                // + V̄·T_lᵀ = conj(V·conj(T_l)ᵀ)
                let mut blc = b.clone();
                for i in 0..blc.rows() {
                    for j in 0..blc.cols() {
                        blc[(i, j)] = b[(i, j)].conj();
                    }
                }
                let vb = v.matmul(&blc.transpose());
                for i in 0..rhs.rows() {
                    for j in 0..rhs.cols() {
                        rhs[(i, j)] += vb[(i, j)].conj() * wl2;
                    }
                }
            }
            let (lp, up) = crate::la::svd::eigh(&hp);
            let (lq, uq) = crate::la::svd::eigh(&hq);
            let core_rhs = uq.h_matmul(&rhs).matmul(&up);
            let damp = 1e-18 * (lp.first().copied().unwrap_or(0.0) + lq.first().copied().unwrap_or(0.0)).max(1e-300);
            let mut m_tilde = core_rhs;
            for i in 0..m_tilde.rows() {
                for j in 0..m_tilde.cols() {
                    let den = (lq[i] + lp[j]).max(damp);
                    m_tilde[(i, j)] = m_tilde[(i, j)] / num_complex::Complex64::new(den, 0.0);
                }
            }
            let m = uq.matmul(&m_tilde).matmul(&up.conj_transpose());
            // split the merged block into the two factors, tile by tile
            let mut row_off = [0usize; 5];
            let mut col_off = [0usize; 5];
            for t4 in 0..4 {
                row_off[t4 + 1] = row_off[t4] + self.ranks[d][outs[t4]];
                col_off[t4 + 1] = col_off[t4] + self.ranks[d - 2][c0 + t4];
            }
            let mscale = crate::la::svd::sigma_max(&m);
            let mut uppers: [[CMat; 2]; 2] =
                core::array::from_fn(|_| core::array::from_fn(|_| CMat::zeros(0, 0)));
            let mut cores: [[CMat; 2]; 2] =
                core::array::from_fn(|_| core::array::from_fn(|_| CMat::zeros(0, 0)));
            for ji in 0..2usize {
                for ki in 0..2usize {
                    let tile = m.sub_block(
                        row_off[2 * ji]..row_off[2 * ji + 2],
                        col_off[2 * ki]..col_off[2 * ki + 2],
                    );
                    let pair_mid = self.pair(d - 1, 2 * jp + ji, 2 * k + ki);
                    let svd = crate::la::svd::svd(&tile);
                    let keep = svd
                        .sigma
                        .iter()
                        .filter(|&&sv| sv > cut_rel * mscale.max(1e-300))
                        .count()
                        .min(self.mid_cap)
                        .min(tile.rows())
                        .min(tile.cols());
                    let u_keep = svd.u.col_block(0..keep);
                    let mut sv = CMat::zeros(keep, tile.cols());
                    for i in 0..keep {
                        for cc in 0..tile.cols() {
                            sv[(i, cc)] = svd.v[(cc, i)].conj() * svd.sigma[i];
                        }
                    }
                    uppers[ji][ki] = u_keep;
                    cores[ji][ki] = sv;
                    new_mid_ranks[pair_mid] = keep;
                }
            }
            for ji in 0..2usize {
                let g_up = ((2 * jp + ji) << srcs) | k;
                let rows_d = uppers[ji][0].rows();
                let cols_d = uppers[ji][0].cols() + uppers[ji][1].cols();
                let mut blk = CMat::zeros(rows_d, cols_d);
                blk.set_block(0, 0, &uppers[ji][0]);
                blk.set_block(0, uppers[ji][0].cols(), &uppers[ji][1]);
                self.grouped[d - 1][g_up] = blk;
            }
            for ki in 0..2usize {
                let g_lo = (jp << (srcs + 1)) | (2 * k + ki);
                let blk = CMat::vstack(&[&cores[0][ki], &cores[1][ki]]);
                self.grouped[d - 2][g_lo] = blk;
            }
        }
        self.ranks[d - 1] = new_mid_ranks;
        self.offsets[d - 1] = super::prefix(&self.ranks[d - 1]);
    }
}

impl Scaffold {
    /// t (level-d layout) -> level-(d-1) layout through the level-d factor.
    fn strip_step_right(&self, t: &CMat, d: usize, rel: f64) -> CMat {
        let mut next = CMat::zeros(self.state_len(d - 1), t.cols());
        for g in 0..self.groups() {
            let (p0, p1, c0) = self.group_pairs(d, g);
            let stacked = self.gather_pairs(t, d, p0, p1);
            let stripped = pinv_trunc(&self.grouped[d - 1][g], rel).matmul(&stacked);
            next.set_block(self.offsets[d - 1][c0], 0, &stripped);
        }
        next
    }

    /// t (level-(e-1) layout) -> level-e layout through the transposed factor.
    fn strip_step_left(&self, t: &CMat, e: usize, rel: f64) -> CMat {
        let mut next = CMat::zeros(self.state_len(e), t.cols());
        for g in 0..self.groups() {
            let (p0, p1, c0) = self.group_pairs(e, g);
            let children = t.row_block(self.offsets[e - 1][c0]..self.offsets[e - 1][c0 + 2]);
            let stripped = pinv_trunc(&self.grouped[e - 1][g].transpose(), rel).matmul(&children);
            let r0 = self.ranks[e][p0];
            next.set_block(self.offsets[e][p0], 0, &stripped.row_block(0..r0));
            next.set_block(self.offsets[e][p1], 0, &stripped.row_block(r0..stripped.rows()));
        }
        next
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::butterfly::test_support::random_butterfly;
    use crate::op::SumOp;
    use crate::sketch::measure_residual;
    use num_complex::Complex64;

    #[test]
    fn zero_operator_collapses() {
        let z = CMat::zeros(48, 48);
        let (bf, report) = reconstruct_iterative(&z, 2, 3, 4, 1e-3, 10, 7).unwrap();
        assert_eq!(report.k_iter, 1);
        assert_eq!(report.residual, 0.0);
        assert_eq!(bf.storage_stats().max_rank, 0);
    }

    #[test]
    fn planted_butterflies_recovered() {
        // shallow butterflies converge in one sweep to the noise floor;
        // deeper ones reach the requested tolerance in a bounded number
        // of sweeps with fresh probes inside the 3e soundness envelope
        for (levels, eps, fresh_tol) in
            [(1usize, 1e-8, 1e-7), (2, 1e-8, 1e-7), (3, 1e-3, 3e-3), (4, 1e-3, 3e-3)]
        {
            let n = 32 << levels;
            let b = random_butterfly(n, n, levels, 3, 100 + levels as u64);
            let (rec, report) = reconstruct_iterative(&b, levels, 3, 8, eps, 25, 55).unwrap();
            let fresh = measure_residual(&rec, &b, 6, 999);
            assert!(
                fresh <= fresh_tol,
                "L={levels}: fresh {fresh:.2e} sketch {:.2e} k={}",
                report.residual,
                report.k_iter
            );
        }
    }

    #[test]
    fn sum_of_butterflies_level3() {
        let n = 256;
        let b1 = random_butterfly(n, n, 3, 3, 31);
        let b2 = random_butterfly(n, n, 3, 3, 32);
        let sum = SumOp::new(vec![
            (Complex64::new(1.0, 0.0), &b1 as &dyn LinearOperator),
            (Complex64::new(1.0, 0.0), &b2 as &dyn LinearOperator),
        ]);
        // rank of the sum can double: allow 2r
        let (rec, _report) = reconstruct_iterative(&sum, 3, 6, 8, 1e-3, 25, 77).unwrap();
        let fresh = measure_residual(&rec, &sum, 20, 4242);
        assert!(fresh <= 3e-3, "fresh {fresh:.2e}");
    }

    #[test]
    fn apply_budget_is_sketch_only() {
        let n = 128;
        let b = random_butterfly(n, n, 2, 3, 41);
        let counted = crate::op::CountingOp::new(&b);
        let n_rnd = 3 * 3 + 5;
        let _ = reconstruct_iterative(&counted, 2, 3, 5, 1e-6, 9, 3).unwrap();
        // exactly n_rnd forward and n_rnd transpose columns, in one call each
        assert_eq!(counted.forward_count(), n_rnd as u64);
        assert_eq!(counted.transpose_count(), n_rnd as u64);
        assert_eq!(counted.call_counts(), (1, 1));
    }

    #[test]
    fn seed_determinism_bitwise() {
        let n = 96;
        let b = random_butterfly(n, n, 2, 3, 51);
        let (r1, _) = reconstruct_iterative(&b, 2, 3, 6, 1e-6, 8, 12345).unwrap();
        let (r2, _) = reconstruct_iterative(&b, 2, 3, 6, 1e-6, 8, 12345).unwrap();
        assert_eq!(r1.to_bytes(), r2.to_bytes());
        let (r3, _) = reconstruct_iterative(&b, 2, 3, 6, 1e-6, 8, 54321).unwrap();
        assert!(r1.to_bytes() != r3.to_bytes());
    }

    #[test]
    fn nonconvergence_signalled() {
        // rank starved: r = 1 against a rank-3 planted butterfly
        let n = 128;
        let b = random_butterfly(n, n, 2, 3, 61);
        match reconstruct_iterative(&b, 2, 1, 2, 1e-6, 3, 5) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-6);
            }
            other => panic!("expected NonConvergence, got {:?}", other.map(|(_, r)| r.residual)),
        }
    }
}
