//! Direct butterfly compression of an admissible kernel block.
//!
//! Level-0 source subgroups are skeletonized against randomly sampled
//! observers of the whole observation group; at each higher level the
//! merged children skeletons are re-skeletonized against observers sampled
//! from the refined observation subgroup. The interpolation matrices from
//! the rank-revealing QR become the butterfly factors, and the final
//! skeleton columns are evaluated exactly to form the outer observer
//! blocks. Entry evaluations stay O(n log n) and are tracked by the
//! kernel's counter.

use alloc::vec::Vec;
use core::ops::Range;

use super::{split_bounds, Butterfly};
use crate::error::Error;
use crate::geometry::{ClusterTree, NodeId};
use crate::kernels::KernelSpec;
use crate::la::mat::CMat;
use crate::la::qr::rrqr_skeleton;
use crate::rng::Rng;
use crate::Result;

#[derive(Clone, Copy, Debug)]
pub struct DirectParams {
    /// Relative skeletonization tolerance.
    pub tol: f64,
    /// Observer oversampling factor.
    pub chi_s: f64,
    /// Hard cap on any block rank.
    pub max_rank: usize,
    pub seed: u64,
}

impl Default for DirectParams {
    fn default() -> Self {
        DirectParams { tol: 1e-4, chi_s: 3.0, max_rank: 128, seed: 0 }
    }
}

/// Compress the admissible block on the given tree nodes; the level count
/// is the leaf distance `tree.depth - node.level`.
pub fn construct_direct(
    kernel: &KernelSpec,
    tree: &ClusterTree,
    obs_node: NodeId,
    src_node: NodeId,
    params: &DirectParams,
) -> Result<Butterfly> {
    let obs = tree.node(obs_node);
    let src = tree.node(src_node);
    debug_assert_eq!(obs.level, src.level);
    let levels = tree.depth - obs.level;
    construct_direct_ranges(kernel, obs.range.clone(), src.range.clone(), levels, params)
}

/// Range-based construction; subgroup boundaries follow the same
/// ceil-halving as the cluster tree, so both entry points agree.
pub fn construct_direct_ranges(
    kernel: &KernelSpec,
    obs: Range<usize>,
    src: Range<usize>,
    levels: usize,
    params: &DirectParams,
) -> Result<Butterfly> {
    let m = obs.len();
    let n = src.len();
    if levels > 0 && (1usize << levels) * 4 > m.min(n) {
        return Err(Error::InvalidGeometry(alloc::format!(
            "{levels} butterfly levels do not fit a {m}x{n} block"
        )));
    }
    let np = 1usize << levels;
    let row_bounds = split_bounds(m, levels);
    let col_bounds = split_bounds(n, levels);
    let rng = Rng::new(params.seed);

    // level-0 skeletons per source subgroup
    let mut skel: Vec<Vec<usize>> = Vec::with_capacity(np); // global column ids
    let mut q_blocks: Vec<CMat> = Vec::with_capacity(np);
    for k in 0..np {
        let cols: Vec<usize> = (src.start + col_bounds[k]..src.start + col_bounds[k + 1]).collect();
        let mut r_work = 24.min(params.max_rank).max(4);
        let mut attempt = 0u64;
        let (sel, interp) = loop {
            let mut r = rng.derive((attempt << 32) | k as u64);
            let s0 = m.min(ceil_mul(params.chi_s, r_work) + 8);
            let rows: Vec<usize> =
                r.sample_without_replacement(m, s0).into_iter().map(|i| obs.start + i).collect();
            let block = kernel.eval_indexed(&rows, &cols)?;
            match rrqr_skeleton(&block, params.tol, r_work) {
                Ok(sk) => break (sk.cols, sk.interp),
                Err(Error::RankOverflow { .. }) if r_work < params.max_rank => {
                    r_work = (2 * r_work).min(params.max_rank);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        skel.push(sel.iter().map(|&c| cols[c]).collect());
        q_blocks.push(interp);
    }

    // interior transitions: re-skeletonize merged children skeletons
    // against observers sampled from the refined observation subgroup
    let mut interior: Vec<Vec<CMat>> = Vec::with_capacity(levels);
    for d in 1..=levels {
        let srcs = levels - d;
        let mut lvl_blocks = Vec::with_capacity(np);
        let mut lvl_skel = Vec::with_capacity(np);
        for p in 0..np {
            let j = p >> srcs;
            let k = p & ((1 << srcs) - 1);
            let c0 = ((j >> 1) << (srcs + 1)) | (2 * k);
            let mut candidates = skel[c0].clone();
            candidates.extend_from_slice(&skel[c0 | 1]);
            let span = 1usize << (levels - d);
            let o_lo = row_bounds[j * span];
            let o_hi = row_bounds[(j + 1) * span];
            let osize = o_hi - o_lo;
            let mut r = rng.derive((d as u64) << 48 | (p as u64) << 8 | 1);
            let want = osize.min(ceil_mul(params.chi_s, candidates.len().max(1)) + 8);
            let rows: Vec<usize> = r
                .sample_without_replacement(osize, want)
                .into_iter()
                .map(|i| obs.start + o_lo + i)
                .collect();
            let block = kernel.eval_indexed(&rows, &candidates)?;
            let sk = rrqr_skeleton(&block, params.tol, params.max_rank)?;
            lvl_skel.push(sk.cols.iter().map(|&c| candidates[c]).collect::<Vec<_>>());
            lvl_blocks.push(sk.interp);
        }
        // level-(d-1) skeletons are no longer needed
        skel = lvl_skel;
        interior.push(lvl_blocks);
    }

    // outer observer blocks: exact kernel columns at the final skeletons
    let mut p_blocks = Vec::with_capacity(np);
    for j in 0..np {
        let rows: Vec<usize> =
            (obs.start + row_bounds[j]..obs.start + row_bounds[j + 1]).collect();
        p_blocks.push(kernel.eval_indexed(&rows, &skel[j])?);
    }

    let mut ranks: Vec<Vec<usize>> = Vec::with_capacity(levels + 1);
    ranks.push(q_blocks.iter().map(|b| b.rows()).collect());
    for lvl in &interior {
        ranks.push(lvl.iter().map(|b| b.rows()).collect());
    }
    if ranks.len() == levels {
        // levels == 0: outer rank comes straight from the skeletons
        ranks.push(p_blocks.iter().map(|b| b.cols()).collect());
    }
    debug_assert_eq!(ranks.len(), levels + 1);
    Ok(Butterfly::new_from_parts(m, n, levels, ranks, q_blocks, interior, p_blocks))
}

fn ceil_mul(f: f64, x: usize) -> usize {
    libm::ceil(f * x as f64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_geometry, PointCloud, ShapeSpec};
    use crate::kernels::{DiagonalRule, KernelKind, KernelSpec};
    use crate::rng::Rng;

    /// Two opposite arcs of a circle: sources on one, observers on the
    /// other; always an admissible pair at chi = 2.
    fn opposite_arcs(n_per: usize, k: f64) -> KernelSpec {
        let half = core::f64::consts::PI * 0.45;
        let a = generate_geometry(&ShapeSpec::Arc {
            radius: 1.0,
            count: n_per,
            start: -half / 2.0,
            end: half / 2.0,
        })
        .unwrap();
        let b = generate_geometry(&ShapeSpec::Arc {
            radius: 1.0,
            count: n_per,
            start: core::f64::consts::PI - half / 2.0,
            end: core::f64::consts::PI + half / 2.0,
        })
        .unwrap();
        let mut pts = a.points().to_vec();
        pts.extend_from_slice(b.points());
        let cloud = PointCloud::new(2, pts).unwrap();
        KernelSpec::new(KernelKind::Helmholtz2d, k, cloud, DiagonalRule::Forbid)
    }

    fn dense_block(kernel: &KernelSpec, obs: core::ops::Range<usize>, src: core::ops::Range<usize>) -> CMat {
        kernel.eval_block(obs, src).unwrap()
    }

    #[test]
    fn zero_kernel_gives_zero_butterfly() {
        // off-diagonal blocks of the identity kernel vanish identically
        let cloud = generate_geometry(&ShapeSpec::Circle { radius: 1.0, count: 256 }).unwrap();
        let spec = KernelSpec::new(KernelKind::Identity, 0.0, cloud, DiagonalRule::Forbid);
        let params = DirectParams { tol: 1e-8, chi_s: 3.0, max_rank: 64, seed: 1 };
        let b = construct_direct_ranges(&spec, 0..128, 128..256, 2, &params).unwrap();
        assert_eq!(b.storage_stats().max_rank, 0);
        let mut rng = Rng::new(2);
        let x = CMat::random(128, 3, &mut rng);
        assert_eq!(b.apply(&x).frob_norm(), 0.0);
    }

    #[test]
    fn smooth_kernel_level_zero_tight() {
        let cloud = generate_geometry(&ShapeSpec::Circle { radius: 1.0, count: 128 }).unwrap();
        let spec =
            KernelSpec::new(KernelKind::SyntheticOscillatory, 0.0, cloud, DiagonalRule::Forbid);
        let params = DirectParams { tol: 1e-10, chi_s: 3.0, max_rank: 64, seed: 1 };
        let b = construct_direct_ranges(&spec, 0..32, 96..128, 0, &params).unwrap();
        let dense = dense_block(&spec, 0..32, 96..128);
        let err = b.to_dense(None).unwrap().sub(&dense).frob_norm() / dense.frob_norm();
        assert!(err <= 1e-9, "rel err {err}");
    }

    #[test]
    fn level_zero_matches_rrqr_quality() {
        let spec = opposite_arcs(128, 20.0);
        let params = DirectParams { tol: 1e-6, chi_s: 3.0, max_rank: 96, seed: 2 };
        let b = construct_direct_ranges(&spec, 128..256, 0..128, 0, &params).unwrap();
        let dense = dense_block(&spec, 128..256, 0..128);
        let err = b.to_dense(None).unwrap().sub(&dense).frob_norm() / dense.frob_norm();
        assert!(err <= 1e-5, "rel err {err}");
        assert!(b.storage_stats().max_rank < 40);
    }

    #[test]
    fn opposite_arcs_three_levels() {
        // k·diameter ≈ 60
        let spec = opposite_arcs(256, 30.0);
        let params = DirectParams { tol: 1e-4, chi_s: 3.0, max_rank: 96, seed: 3 };
        let b = construct_direct_ranges(&spec, 256..512, 0..256, 3, &params).unwrap();
        let dense = dense_block(&spec, 256..512, 0..256);
        let err = b.to_dense(None).unwrap().sub(&dense).frob_norm() / dense.frob_norm();
        assert!(err <= 1e-3, "rel err {err}");
    }

    #[test]
    fn transpose_side_consistent() {
        let spec = opposite_arcs(128, 15.0);
        let params = DirectParams { tol: 1e-5, chi_s: 3.0, max_rank: 96, seed: 4 };
        let b = construct_direct_ranges(&spec, 128..256, 0..128, 2, &params).unwrap();
        let dense = dense_block(&spec, 128..256, 0..128);
        let mut rng = Rng::new(5);
        let y = CMat::random(128, 3, &mut rng);
        let got = b.apply_transpose(&y);
        let want = dense.t_matmul(&y);
        let rel = got.sub(&want).frob_norm() / want.frob_norm();
        assert!(rel <= 1e-4, "rel {rel}");
    }

    #[test]
    fn entry_budget_n_log_n() {
        // evaluation counter stays within C·n·log2(n) with C frozen from
        // small-case calibration (C = 130 with chi_s = 3, tol = 1e-4)
        for &n_per in &[256usize, 512, 1024] {
            let spec = opposite_arcs(n_per, 0.05 * n_per as f64);
            let levels = (n_per / 64).trailing_zeros() as usize;
            spec.reset_counter();
            let params = DirectParams { tol: 1e-4, chi_s: 3.0, max_rank: 128, seed: 6 };
            let b =
                construct_direct_ranges(&spec, n_per..2 * n_per, 0..n_per, levels, &params).unwrap();
            let count = spec.entries_evaluated() as f64;
            let budget = 130.0 * n_per as f64 * libm::log2(n_per as f64);
            assert!(count <= budget, "n={n_per}: {count} > {budget}");
            assert!(b.storage_stats().entries > 0);
        }
    }

    #[test]
    fn rank_plateau_as_block_grows() {
        // fixed angular size, doubling point density: max rank must grow
        // by no more than 1.5x per doubling
        let mut last = None;
        for &n_per in &[128usize, 256, 512] {
            let spec = opposite_arcs(n_per, 24.0);
            let levels = (n_per / 64).trailing_zeros() as usize;
            let params = DirectParams { tol: 1e-4, chi_s: 3.0, max_rank: 128, seed: 7 };
            let b =
                construct_direct_ranges(&spec, n_per..2 * n_per, 0..n_per, levels, &params).unwrap();
            let r = b.storage_stats().max_rank;
            if let Some(prev) = last {
                assert!(
                    (r as f64) <= 1.5 * prev as f64,
                    "rank jumped {prev} -> {r} at n={n_per}"
                );
            }
            last = Some(r);
        }
    }

    #[test]
    fn levels_must_fit() {
        let spec = opposite_arcs(64, 5.0);
        let params = DirectParams::default();
        assert!(construct_direct_ranges(&spec, 64..128, 0..64, 5, &params).is_err());
    }
}
