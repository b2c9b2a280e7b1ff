//! Non-iterative randomized reconstruction by peeling.
//!
//! After the outer projections are recovered, interior levels are peeled
//! half from each end: structured probes supported on a single subgroup
//! isolate the corresponding half of every transition block at one level.
//! Stripping the already-recovered outer factors with grouped
//! pseudoinverses exposes the level being solved, and the orthonormal
//! column basis of each response fixes the internal gauge that deeper
//! levels then inherit through the same stripping. One final unstructured
//! probe round reconciles the two gauges where the halves meet.

use alloc::vec;
use alloc::vec::Vec;

use super::{low_rank_core, projections_with_bars, with_counted_op, ReconstructionReport, Scaffold, Scheme};
use crate::butterfly::Butterfly;
use crate::error::Error;
use crate::la::mat::CMat;
use crate::la::qr::col_space_basis;
use crate::la::svd::{pinv_trunc, pinv_trunc_with_drop};
use crate::op::LinearOperator;
use crate::sketch::{RoundSpec, Side, SketchData};
use crate::Result;

const PINV_TOL: f64 = 1e-12;
const DROP_LIMIT: f64 = 0.10;
/// Relative cutoff for trimming imposed ranks to the sketch data.
const RANK_CUT: f64 = 1e-7;
/// Level-global relative cutoff of the strip/join pseudoinverses.
const GLOBAL_REL: f64 = 1e-9;

/// Probe rounds the peel needs for a block of this shape: one full sketch
/// per side, one structured batch per (level, subgroup), and a closing
/// full round that joins the two gauge domains.
pub fn noniter_round_specs(m: usize, n: usize, levels: usize, r: usize, c: usize) -> Vec<RoundSpec> {
    let w = r + c;
    let row_bounds = crate::butterfly::split_bounds(m, levels);
    let col_bounds = crate::butterfly::split_bounds(n, levels);
    let mut specs = vec![
        RoundSpec { side: Side::Right, support: 0..n, width: w, tag: 1 },
        RoundSpec { side: Side::Left, support: 0..m, width: w, tag: 2 },
    ];
    let mid = levels / 2;
    for d in ((mid + 1)..=levels).rev() {
        let span = 1usize << (d - 1);
        for child in 0..(1usize << (levels - d + 1)) {
            specs.push(RoundSpec {
                side: Side::Right,
                support: col_bounds[child * span]..col_bounds[(child + 1) * span],
                width: w,
                tag: (3 << 56) | ((d as u64) << 32) | child as u64,
            });
        }
    }
    for e in 1..=mid {
        let span = 1usize << (levels - e);
        for child in 0..(1usize << e) {
            specs.push(RoundSpec {
                side: Side::Left,
                support: row_bounds[child * span]..row_bounds[(child + 1) * span],
                width: w,
                tag: (4 << 56) | ((e as u64) << 32) | child as u64,
            });
        }
    }
    specs.push(RoundSpec { side: Side::Right, support: 0..n, width: w, tag: 5 << 56 });
    specs
}

/// Reconstruct by peeling with `n_rnd = r + c` probes per round. Works for
/// any level count; the operator is applied O(2^{L/2}·n_rnd) times.
pub fn reconstruct_noniterative(
    op: &dyn LinearOperator,
    levels: usize,
    r: usize,
    c: usize,
    seed: u64,
) -> Result<(Butterfly, ReconstructionReport)> {
    let (m, n) = (op.nrows(), op.ncols());
    let w = r + c;
    if w > m.min(n) {
        return Err(Error::SketchTooWide { requested: w, limit: m.min(n) });
    }
    let ((bf, residual), fwd, tr) = with_counted_op(op, |counted| {
        if levels == 0 {
            let sketch = crate::sketch::draw_sketch(counted, w, seed)?;
            let data = SketchData::from_sketch(&sketch);
            if data.u_r.frob_norm() == 0.0 && data.u_lt.frob_norm() == 0.0 {
                return Ok((Butterfly::zero(m, n, 0), 0.0));
            }
            let bf = low_rank_core(m, n, r, &data, seed, PINV_TOL)?;
            let den = data.u_r.frob_norm() + data.u_lt.frob_norm();
            let res = (bf.apply(&data.v_r).sub(&data.u_r).frob_norm()
                + bf.apply_transpose(&data.v_lt).sub(&data.u_lt).frob_norm())
                / den;
            return Ok((bf, res));
        }
        let specs = noniter_round_specs(m, n, levels, r, c);
        let mut rounds = Vec::with_capacity(specs.len());
        for spec in specs {
            let response = match spec.side {
                Side::Right => counted.apply(&spec.full_probe(seed, n)),
                Side::Left => counted.apply_transpose(&spec.full_probe(seed, m)),
            };
            rounds.push((spec, response));
        }
        noniter_from_rounds(m, n, levels, r, seed, &rounds)
    })?;
    let report = ReconstructionReport {
        scheme: Scheme::NonIterative,
        k_iter: 1,
        residual,
        forward_applies: fwd,
        transpose_applies: tr,
        n_rnd: w,
        rank_used: r,
        residual_history: Vec::new(),
    };
    Ok((bf, report))
}

fn find_round<'a>(rounds: &'a [(RoundSpec, CMat)], tag: u64) -> &'a (RoundSpec, CMat) {
    rounds.iter().find(|(s, _)| s.tag == tag).expect("missing peel round")
}

/// Core peel from captured rounds; returns the butterfly and the closing
/// probe residual.
pub(crate) fn noniter_from_rounds(
    m: usize,
    n: usize,
    levels: usize,
    r: usize,
    seed: u64,
    rounds: &[(RoundSpec, CMat)],
) -> Result<(Butterfly, f64)> {
    let (full_r, resp_r) = find_round(rounds, 1);
    let (full_l, resp_l) = find_round(rounds, 2);
    let data = SketchData {
        v_r: full_r.full_probe(seed, n),
        u_r: resp_r.clone(),
        v_lt: full_l.full_probe(seed, m),
        u_lt: resp_l.clone(),
    };
    if data.u_r.frob_norm() == 0.0 && data.u_lt.frob_norm() == 0.0 {
        return Ok((Butterfly::zero(m, n, levels), 0.0));
    }
    let ranks =
        super::effective_ranks(m, n, levels, r, &data.u_r, &data.u_lt, RANK_CUT);
    let mut sc = Scaffold::with_ranks(m, n, levels, ranks);
    let (p, q, _bar_r, _bar_lt) = projections_with_bars(
        &data,
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
    let np = 1usize << levels;
    let outer_scale = sc
        .p
        .iter()
        .chain(sc.q.iter())
        .map(crate::la::svd::sigma_max)
        .fold(0.0f64, f64::max);
    let outer_cut = GLOBAL_REL * outer_scale.max(1e-300);
    let pinv_p: Vec<CMat> =
        sc.p.iter().map(|b| crate::la::svd::pinv_trunc_abs(b, outer_cut)).collect();
    let pinv_qt: Vec<CMat> = sc
        .q
        .iter()
        .map(|b| crate::la::svd::pinv_trunc_abs(&b.transpose(), outer_cut))
        .collect();
    let mid = levels / 2;
    let mut strip_cache: Vec<Vec<Option<CMat>>> =
        (0..levels).map(|_| vec![None; sc.groups()]).collect();
    let mut strip_cache_t: Vec<Vec<Option<CMat>>> =
        (0..levels).map(|_| vec![None; sc.groups()]).collect();
    let mut worst_drop = 0.0f64;
    let mut worst_level = 0usize;

    // top-level state of a right response: strip the observer projections
    let top_state = |resp: &CMat, sc: &Scaffold| -> CMat {
        let mut state = CMat::zeros(sc.state_len(levels), resp.cols());
        for j in 0..np {
            let rows = sc.row_bounds[j]..sc.row_bounds[j + 1];
            let blk = pinv_p[j].matmul(&resp.row_block(rows));
            state.set_block(sc.offsets[levels][j], 0, &blk);
        }
        state
    };

    // right half: levels L down to mid+1
    for d in ((mid + 1)..=levels).rev() {
        sc.alloc_grouped_zero(d);
        let children = 1usize << (levels - d + 1);
        for child in 0..children {
            let (spec, resp) = find_round(rounds, (3 << 56) | ((d as u64) << 32) | child as u64);
            debug_assert_eq!(spec.side, Side::Right);
            let state_l = top_state(resp, &sc);
            let mut drop = 0.0;
            let state = sc.strip_right(&state_l, d, &mut strip_cache, &mut drop, PINV_TOL);
            if drop > worst_drop {
                worst_drop = drop;
                worst_level = d;
            }
            let k_p = child >> 1;
            for jp in 0..(1usize << (d - 1)) {
                let p0 = sc.pair(d, 2 * jp, k_p);
                let p1 = sc.pair(d, 2 * jp + 1, k_p);
                let lhs = sc.gather_pairs(&state, d, p0, p1);
                let child_pair = sc.pair(d - 1, jp, child);
                let rc = sc.ranks[d - 1][child_pair];
                let col_off = if child % 2 == 0 {
                    0
                } else {
                    sc.ranks[d - 1][sc.pair(d - 1, jp, child - 1)]
                };
                let basis = if lhs.frob_norm() == 0.0 {
                    CMat::zeros(lhs.rows(), rc)
                } else {
                    col_space_basis(&lhs, rc)
                };
                let g = (jp << (levels - d)) | k_p;
                sc.grouped[d - 1][g].set_block(0, col_off, &basis);
            }
        }
    }

    // left half: levels 1 up to mid, through the transposed chain
    for e in 1..=mid {
        sc.alloc_grouped_zero(e);
        for child in 0..(1usize << e) {
            let (spec, resp) = find_round(rounds, (4 << 56) | ((e as u64) << 32) | child as u64);
            debug_assert_eq!(spec.side, Side::Left);
            let mut state0 = CMat::zeros(sc.state_len(0), resp.cols());
            for k in 0..np {
                let rows = sc.col_bounds[k]..sc.col_bounds[k + 1];
                let blk = pinv_qt[k].matmul(&resp.row_block(rows));
                state0.set_block(sc.offsets[0][k], 0, &blk);
            }
            let mut drop = 0.0;
            let state =
                sc.strip_left_t(&state0, e - 1, &mut strip_cache_t, &mut drop, PINV_TOL);
            if drop > worst_drop {
                worst_drop = drop;
                worst_level = e;
            }
            let jp = child >> 1;
            for k in 0..(1usize << (levels - e)) {
                let c0 = sc.pair(e - 1, jp, 2 * k);
                let lhs = state.row_block(sc.offsets[e - 1][c0]..sc.offsets[e - 1][c0 + 2]);
                let pair = sc.pair(e, child, k);
                let r_row = sc.ranks[e][pair];
                let row_off = if child % 2 == 0 {
                    0
                } else {
                    sc.ranks[e][sc.pair(e, child - 1, k)]
                };
                let basis = if lhs.frob_norm() == 0.0 {
                    CMat::zeros(lhs.rows(), r_row)
                } else {
                    col_space_basis(&lhs, r_row)
                };
                let g = (jp << (levels - e)) | k;
                sc.grouped[e - 1][g].set_block(row_off, 0, &basis.transpose());
            }
        }
    }

    // join the two gauges at the middle interface
    let (joint_spec, joint_resp) = find_round(rounds, 5 << 56);
    let vj = joint_spec.full_probe(seed, n);
    let mut drop = 0.0;
    let g_high = sc.strip_right(&top_state(joint_resp, &sc), mid, &mut strip_cache, &mut drop, PINV_TOL);
    if drop > worst_drop {
        worst_drop = drop;
        worst_level = mid;
    }
    let g_low = sc.right_chain(&sc.apply_q(&vj), mid);
    let d_fold = mid + 1;
    let lo_scale = (0..np)
        .map(|p| {
            let lo = g_low.row_block(sc.offsets[mid][p]..sc.offsets[mid][p] + sc.ranks[mid][p]);
            crate::la::svd::sigma_max(&lo)
        })
        .fold(0.0f64, f64::max);
    let join_cut = GLOBAL_REL * lo_scale.max(1e-300);
    let joins: Vec<CMat> = (0..np)
        .map(|p| {
            let hi = g_high.row_block(sc.offsets[mid][p]..sc.offsets[mid][p] + sc.ranks[mid][p]);
            let lo = g_low.row_block(sc.offsets[mid][p]..sc.offsets[mid][p] + sc.ranks[mid][p]);
            hi.matmul(&crate::la::svd::pinv_trunc_abs(&lo, join_cut))
        })
        .collect();
    for g in 0..sc.groups() {
        let (_p0, _p1, c0) = sc.group_pairs(d_fold, g);
        let blk = &sc.grouped[d_fold - 1][g];
        let rc0 = sc.ranks[d_fold - 1][c0];
        let left = blk.col_block(0..rc0).matmul(&joins[c0]);
        let right = blk.col_block(rc0..blk.cols()).matmul(&joins[c0 + 1]);
        let mut joined = CMat::zeros(blk.rows(), blk.cols());
        joined.set_block(0, 0, &left);
        joined.set_block(0, rc0, &right);
        sc.grouped[d_fold - 1][g] = joined;
    }

    if worst_drop > DROP_LIMIT {
        return Err(Error::IllConditionedPeel { level: worst_level });
    }

    let bf = sc.into_butterfly();
    // closing residual over the joint and the full left rounds
    let den = joint_resp.frob_norm() + data.u_lt.frob_norm();
    let residual = if den == 0.0 {
        0.0
    } else {
        (bf.apply(&vj).sub(joint_resp).frob_norm()
            + bf.apply_transpose(&data.v_lt).sub(&data.u_lt).frob_norm())
            / den
    };
    Ok((bf, residual))
}

impl Scaffold {
    pub(crate) fn alloc_grouped_zero(&mut self, d: usize) {
        let mut lvl = Vec::with_capacity(self.groups());
        for g in 0..self.groups() {
            let (p0, p1, c0) = self.group_pairs(d, g);
            let rows = self.ranks[d][p0] + self.ranks[d][p1];
            let cols = self.ranks[d - 1][c0] + self.ranks[d - 1][c0 + 1];
            lvl.push(CMat::zeros(rows, cols));
        }
        self.grouped[d - 1] = lvl;
    }

    /// Strip recovered levels 1..=upto from a level-0 state (transposed
    /// chain), exposing the level-(upto) state of a left response.
    pub(crate) fn strip_left_t(
        &self,
        state0: &CMat,
        upto: usize,
        cache: &mut Vec<Vec<Option<CMat>>>,
        worst_drop: &mut f64,
        global_rel: f64,
    ) -> CMat {
        let mut state = state0.clone();
        for l in 1..=upto {
            if cache[l - 1].iter().any(|c| c.is_none()) {
                let scale = (0..self.groups())
                    .map(|g| crate::la::svd::sigma_max(&self.grouped[l - 1][g]))
                    .fold(0.0f64, f64::max);
                let cut = global_rel * scale.max(1e-300);
                for g in 0..self.groups() {
                    if cache[l - 1][g].is_none() {
                        let blk = &self.grouped[l - 1][g];
                        let (pi, drop) =
                            crate::la::svd::pinv_trunc_abs_with_drop(&blk.transpose(), cut);
                        if blk.frob_norm() > 0.0 && drop > *worst_drop {
                            *worst_drop = drop;
                        }
                        cache[l - 1][g] = Some(pi);
                    }
                }
            }
            let mut next = CMat::zeros(self.state_len(l), state.cols());
            for g in 0..self.groups() {
                let (p0, p1, c0) = self.group_pairs(l, g);
                let blk = &self.grouped[l - 1][g];
                if blk.rows() == 0 || blk.cols() == 0 {
                    continue;
                }
                let children = state.row_block(self.offsets[l - 1][c0]..self.offsets[l - 1][c0 + 2]);
                let stacked = cache[l - 1][g].as_ref().unwrap().matmul(&children);
                let r0 = self.ranks[l][p0];
                next.set_block(self.offsets[l][p0], 0, &stacked.row_block(0..r0));
                next.set_block(self.offsets[l][p1], 0, &stacked.row_block(r0..stacked.rows()));
            }
            state = next;
        }
        state
    }
}
