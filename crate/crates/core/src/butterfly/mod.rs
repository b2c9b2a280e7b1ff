//! The multilevel butterfly factored form.
//!
//! An L-level butterfly stores `B = P · R^L ⋯ R^1 · Q` where `Q` holds one
//! block per level-0 source subgroup, `P` one block per level-L observer
//! subgroup, and each interior factor `R^d` is block diagonal after a row
//! permutation. States between factors are indexed by (observer subgroup j,
//! source subgroup k) pairs: level d has 2^d observer and 2^{L-d} source
//! subgroups, so every level carries exactly 2^L pair blocks. Block ranks
//! vary per pair; permutations live in the index arithmetic and are never
//! materialized.

pub mod direct;

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use num_complex::Complex64;

use crate::error::Error;
use crate::la::mat::CMat;
use crate::Result;

pub use direct::{construct_direct, construct_direct_ranges, DirectParams};

/// Subgroup boundaries from repeated ceil-halving, matching the cluster
/// tree's median split so tree-derived and size-derived subgroups agree.
pub fn split_bounds(total: usize, levels: usize) -> Vec<usize> {
    let mut bounds = vec![0, total];
    for _ in 0..levels {
        let mut next = Vec::with_capacity(bounds.len() * 2 - 1);
        for w in bounds.windows(2) {
            let (a, b) = (w[0], w[1]);
            next.push(a);
            next.push(a + (b - a + 1) / 2);
        }
        next.push(total);
        bounds = next;
    }
    bounds
}

/// Rank table for an imposed uniform rank r, capped per pair by the
/// interaction's dimensions (observer × source subgroup sizes).
pub fn uniform_ranks(m: usize, n: usize, levels: usize, r: usize) -> Vec<Vec<usize>> {
    let np = 1usize << levels;
    let row_bounds = split_bounds(m, levels);
    let col_bounds = split_bounds(n, levels);
    (0..=levels)
        .map(|d| {
            let srcs = levels - d;
            (0..np)
                .map(|p| {
                    let j = p >> srcs;
                    let k = p & ((1 << srcs) - 1);
                    let span_o = 1usize << srcs;
                    let span_s = 1usize << d;
                    let osz = row_bounds[(j + 1) * span_o] - row_bounds[j * span_o];
                    let ssz = col_bounds[(k + 1) * span_s] - col_bounds[k * span_s];
                    r.min(osz).min(ssz)
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Butterfly {
    m: usize,
    n: usize,
    levels: usize,
    /// ranks[d][p]: rank of the level-d pair block p = (j << (L-d)) | k.
    ranks: Vec<Vec<usize>>,
    /// offsets[d]: prefix sums of ranks[d], length 2^L + 1.
    offsets: Vec<Vec<usize>>,
    /// One block per level-0 source subgroup: ranks[0][k] × n_k.
    q_blocks: Vec<CMat>,
    /// One block per level-L observer subgroup: m_j × ranks[L][j].
    p_blocks: Vec<CMat>,
    /// interior[d-1][p]: block of R^d for pair p at level d, of shape
    /// ranks[d][p] × (ranks[d-1][child0] + ranks[d-1][child1]).
    interior: Vec<Vec<CMat>>,
    row_bounds: Vec<usize>,
    col_bounds: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StorageStats {
    pub entries: usize,
    pub max_rank: usize,
    /// Maximum block rank per level d = 0..=L.
    pub per_level_ranks: Vec<usize>,
}

impl Butterfly {
    pub fn new_from_parts(
        m: usize,
        n: usize,
        levels: usize,
        ranks: Vec<Vec<usize>>,
        q_blocks: Vec<CMat>,
        interior: Vec<Vec<CMat>>,
        p_blocks: Vec<CMat>,
    ) -> Butterfly {
        let row_bounds = split_bounds(m, levels);
        let col_bounds = split_bounds(n, levels);
        let offsets = ranks.iter().map(|r| prefix(r)).collect();
        let b = Butterfly {
            m,
            n,
            levels,
            ranks,
            offsets,
            q_blocks,
            p_blocks,
            interior,
            row_bounds,
            col_bounds,
        };
        b.debug_check();
        b
    }

    fn debug_check(&self) {
        #[cfg(debug_assertions)]
        {
            let np = self.pairs();
            assert_eq!(self.ranks.len(), self.levels + 1);
            assert_eq!(self.q_blocks.len(), np);
            assert_eq!(self.p_blocks.len(), np);
            assert_eq!(self.interior.len(), self.levels);
            for k in 0..np {
                assert_eq!(self.q_blocks[k].rows(), self.ranks[0][k]);
                assert_eq!(self.q_blocks[k].cols(), self.src_range(0, k).len());
                assert_eq!(self.p_blocks[k].cols(), self.ranks[self.levels][k]);
                assert_eq!(self.p_blocks[k].rows(), self.obs_range(self.levels, k).len());
            }
            for d in 1..=self.levels {
                for p in 0..np {
                    let blk = &self.interior[d - 1][p];
                    assert_eq!(blk.rows(), self.ranks[d][p]);
                    let (c0, c1) = self.children(d, p);
                    assert_eq!(blk.cols(), self.ranks[d - 1][c0] + self.ranks[d - 1][c1]);
                }
            }
        }
    }

    /// All-zero butterfly (every rank zero).
    pub fn zero(m: usize, n: usize, levels: usize) -> Butterfly {
        let np = 1usize << levels;
        let row_bounds = split_bounds(m, levels);
        let col_bounds = split_bounds(n, levels);
        let ranks: Vec<Vec<usize>> = (0..=levels).map(|_| vec![0; np]).collect();
        let offsets = ranks.iter().map(|r| prefix(r)).collect();
        let q_blocks =
            (0..np).map(|k| CMat::zeros(0, col_bounds[k + 1] - col_bounds[k])).collect();
        let p_blocks =
            (0..np).map(|j| CMat::zeros(row_bounds[j + 1] - row_bounds[j], 0)).collect();
        let interior = (0..levels).map(|_| (0..np).map(|_| CMat::zeros(0, 0)).collect()).collect();
        Butterfly {
            m,
            n,
            levels,
            ranks,
            offsets,
            q_blocks,
            p_blocks,
            interior,
            row_bounds,
            col_bounds,
        }
    }

    /// Zero-level butterfly from an explicit low-rank product u·v.
    pub fn from_low_rank(u: CMat, v: CMat) -> Butterfly {
        assert_eq!(u.cols(), v.rows());
        let r = u.cols();
        Butterfly::new_from_parts(
            u.rows(),
            v.cols(),
            0,
            vec![vec![r]],
            vec![v],
            Vec::new(),
            vec![u],
        )
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Pair blocks per level (2^L).
    #[inline]
    pub fn pairs(&self) -> usize {
        1 << self.levels
    }

    /// Children pair indices at level d-1 for pair p at level d; the two
    /// child blocks are adjacent in the level-(d-1) state.
    #[inline]
    fn children(&self, d: usize, p: usize) -> (usize, usize) {
        let srcs = self.levels - d; // log2 source subgroups at level d
        let j = p >> srcs;
        let k = p & ((1 << srcs) - 1);
        let c0 = ((j >> 1) << (srcs + 1)) | (2 * k);
        (c0, c0 | 1)
    }

    /// Observer row range of subgroup j at level d (local to this block).
    #[inline]
    pub fn obs_range(&self, d: usize, j: usize) -> Range<usize> {
        let span = 1usize << (self.levels - d);
        self.row_bounds[j * span]..self.row_bounds[(j + 1) * span]
    }

    /// Source column range of subgroup k at level d.
    #[inline]
    pub fn src_range(&self, d: usize, k: usize) -> Range<usize> {
        let span = 1usize << d;
        self.col_bounds[k * span]..self.col_bounds[(k + 1) * span]
    }

    fn state_len(&self, d: usize) -> usize {
        *self.offsets[d].last().unwrap()
    }

    /// Y = B · X (X is n×q). Pair blocks whose input is entirely zero are
    /// skipped, so structured probes cost only their active cone.
    pub fn apply(&self, x: &CMat) -> CMat {
        assert_eq!(x.rows(), self.n, "butterfly apply shape");
        let q = x.cols();
        let np = self.pairs();
        let mut active = vec![false; np];
        let mut state = CMat::zeros(self.state_len(0), q);
        for k in 0..np {
            let r = self.src_range(0, k);
            if self.ranks[0][k] == 0 || block_is_zero(x, r.clone()) {
                continue;
            }
            active[k] = true;
            gemm_rows_into(&mut state, self.offsets[0][k], &self.q_blocks[k], x, r.start);
        }
        for d in 1..=self.levels {
            let mut next_active = vec![false; np];
            let mut next = CMat::zeros(self.state_len(d), q);
            for p in 0..np {
                if self.ranks[d][p] == 0 {
                    continue;
                }
                let (c0, c1) = self.children(d, p);
                if !active[c0] && !active[c1] {
                    continue;
                }
                next_active[p] = true;
                let blk = &self.interior[d - 1][p];
                // children are adjacent rows in the level-(d-1) state
                gemm_rows_into(&mut next, self.offsets[d][p], blk, &state, self.offsets[d - 1][c0]);
            }
            state = next;
            active = next_active;
        }
        let mut y = CMat::zeros(self.m, q);
        for j in 0..np {
            if !active[j] || self.ranks[self.levels][j] == 0 {
                continue;
            }
            let r = self.obs_range(self.levels, j);
            gemm_rows_into(&mut y, r.start, &self.p_blocks[j], &state, self.offsets[self.levels][j]);
        }
        y
    }

    /// X = Bᵀ · Y (plain transpose; Y is m×q).
    pub fn apply_transpose(&self, y: &CMat) -> CMat {
        assert_eq!(y.rows(), self.m, "butterfly transpose apply shape");
        let q = y.cols();
        let np = self.pairs();
        let mut active = vec![false; np];
        let mut state = CMat::zeros(self.state_len(self.levels), q);
        for j in 0..np {
            let r = self.obs_range(self.levels, j);
            if self.ranks[self.levels][j] == 0 || block_is_zero(y, r.clone()) {
                continue;
            }
            active[j] = true;
            gemm_rows_t_into(&mut state, self.offsets[self.levels][j], &self.p_blocks[j], y, r.start);
        }
        for d in (1..=self.levels).rev() {
            let mut next_active = vec![false; np];
            let mut next = CMat::zeros(self.state_len(d - 1), q);
            for p in 0..np {
                if self.ranks[d][p] == 0 || !active[p] {
                    continue;
                }
                let (c0, c1) = self.children(d, p);
                next_active[c0] = true;
                next_active[c1] = true;
                let blk = &self.interior[d - 1][p];
                gemm_rows_t_into(&mut next, self.offsets[d - 1][c0], blk, &state, self.offsets[d][p]);
            }
            state = next;
            active = next_active;
        }
        let mut x = CMat::zeros(self.n, q);
        for k in 0..np {
            if !active[k] || self.ranks[0][k] == 0 {
                continue;
            }
            let r = self.src_range(0, k);
            gemm_rows_t_into(&mut x, r.start, &self.q_blocks[k], &state, self.offsets[0][k]);
        }
        x
    }

    /// Y = B[rows, cols] · X restricted to a sub-block: only the pair
    /// blocks reachable from `cols` and observable in `rows` are touched.
    pub fn apply_sub(&self, rows: Range<usize>, cols: Range<usize>, x: &CMat) -> CMat {
        assert_eq!(x.rows(), cols.len(), "apply_sub shape");
        assert!(rows.end <= self.m && cols.end <= self.n);
        let q = x.cols();
        let np = self.pairs();
        let mut active = vec![false; np];
        let mut state = CMat::zeros(self.state_len(0), q);
        for k in 0..np {
            if self.ranks[0][k] == 0 {
                continue;
            }
            let r = self.src_range(0, k);
            let lo = r.start.max(cols.start);
            let hi = r.end.min(cols.end);
            if lo >= hi {
                continue;
            }
            active[k] = true;
            // columns of Q_k local to the overlap, rows of X likewise
            let qb = self.q_blocks[k].col_block(lo - r.start..hi - r.start);
            let xb = x.row_block(lo - cols.start..hi - cols.start);
            let prod = qb.matmul(&xb);
            state.add_block(self.offsets[0][k], 0, &prod);
        }
        for d in 1..=self.levels {
            let mut next_active = vec![false; np];
            let mut next = CMat::zeros(self.state_len(d), q);
            for p in 0..np {
                if self.ranks[d][p] == 0 {
                    continue;
                }
                let srcs = self.levels - d;
                let j = p >> srcs;
                let or = self.obs_range(d, j);
                if or.start >= rows.end || or.end <= rows.start {
                    continue;
                }
                let (c0, c1) = self.children(d, p);
                if !active[c0] && !active[c1] {
                    continue;
                }
                next_active[p] = true;
                gemm_rows_into(
                    &mut next,
                    self.offsets[d][p],
                    &self.interior[d - 1][p],
                    &state,
                    self.offsets[d - 1][c0],
                );
            }
            state = next;
            active = next_active;
        }
        let mut y = CMat::zeros(rows.len(), q);
        for j in 0..np {
            if !active[j] || self.ranks[self.levels][j] == 0 {
                continue;
            }
            let r = self.obs_range(self.levels, j);
            let lo = r.start.max(rows.start);
            let hi = r.end.min(rows.end);
            if lo >= hi {
                continue;
            }
            let pb = self.p_blocks[j].row_block(lo - r.start..hi - r.start);
            let off = self.offsets[self.levels][j];
            let sb = state.row_block(off..off + self.ranks[self.levels][j]);
            let prod = pb.matmul(&sb);
            y.add_block(lo - rows.start, 0, &prod);
        }
        y
    }

    /// X = B[rows, cols]ᵀ · Y with Y over `rows`.
    pub fn apply_sub_t(&self, rows: Range<usize>, cols: Range<usize>, y: &CMat) -> CMat {
        assert_eq!(y.rows(), rows.len(), "apply_sub_t shape");
        let q = y.cols();
        let np = self.pairs();
        let mut active = vec![false; np];
        let mut state = CMat::zeros(self.state_len(self.levels), q);
        for j in 0..np {
            if self.ranks[self.levels][j] == 0 {
                continue;
            }
            let r = self.obs_range(self.levels, j);
            let lo = r.start.max(rows.start);
            let hi = r.end.min(rows.end);
            if lo >= hi {
                continue;
            }
            active[j] = true;
            let pb = self.p_blocks[j].row_block(lo - r.start..hi - r.start);
            let yb = y.row_block(lo - rows.start..hi - rows.start);
            let prod = pb.t_matmul(&yb);
            state.add_block(self.offsets[self.levels][j], 0, &prod);
        }
        for d in (1..=self.levels).rev() {
            let mut next_active = vec![false; np];
            let mut next = CMat::zeros(self.state_len(d - 1), q);
            for p in 0..np {
                if self.ranks[d][p] == 0 || !active[p] {
                    continue;
                }
                let (c0, c1) = self.children(d, p);
                next_active[c0] = true;
                next_active[c1] = true;
                gemm_rows_t_into(
                    &mut next,
                    self.offsets[d - 1][c0],
                    &self.interior[d - 1][p],
                    &state,
                    self.offsets[d][p],
                );
            }
            state = next;
            active = next_active;
        }
        let mut x = CMat::zeros(cols.len(), q);
        for k in 0..np {
            if !active[k] || self.ranks[0][k] == 0 {
                continue;
            }
            let r = self.src_range(0, k);
            let lo = r.start.max(cols.start);
            let hi = r.end.min(cols.end);
            if lo >= hi {
                continue;
            }
            let qb = self.q_blocks[k].col_block(lo - r.start..hi - r.start);
            let off = self.offsets[0][k];
            let sb = state.row_block(off..off + self.ranks[0][k]);
            let prod = qb.t_matmul(&sb);
            x.add_block(lo - cols.start, 0, &prod);
        }
        x
    }

    /// Dense expansion (guarded by an entry cap; default 16e6 entries).
    pub fn to_dense(&self, cap: Option<usize>) -> Result<CMat> {
        let cap = cap.unwrap_or(16_000_000);
        let entries = self.m * self.n;
        if entries > cap {
            return Err(Error::DenseCapExceeded { entries, cap });
        }
        Ok(self.apply(&CMat::identity(self.n)))
    }

    pub fn storage_stats(&self) -> StorageStats {
        let mut entries = 0usize;
        for b in self.q_blocks.iter().chain(&self.p_blocks) {
            entries += b.entry_count();
        }
        for lvl in &self.interior {
            for b in lvl {
                entries += b.entry_count();
            }
        }
        let per_level_ranks: Vec<usize> =
            self.ranks.iter().map(|r| r.iter().copied().max().unwrap_or(0)).collect();
        let max_rank = per_level_ranks.iter().copied().max().unwrap_or(0);
        StorageStats { entries, max_rank, per_level_ranks }
    }

    pub fn rank_table(&self) -> &[Vec<usize>] {
        &self.ranks
    }

    /// Versioned little-endian byte serialization: header with dimensions
    /// and per-block ranks, then block data in level order (Q, R^1..R^L, P).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"BFLY");
        push_u64(&mut out, 1); // format version
        push_u64(&mut out, self.m as u64);
        push_u64(&mut out, self.n as u64);
        push_u64(&mut out, self.levels as u64);
        for lvl in &self.ranks {
            for &r in lvl {
                push_u64(&mut out, r as u64);
            }
        }
        fn push_mat(out: &mut Vec<u8>, m: &CMat) {
            for v in m.data() {
                out.extend_from_slice(&v.re.to_le_bytes());
                out.extend_from_slice(&v.im.to_le_bytes());
            }
        }
        for b in &self.q_blocks {
            push_mat(&mut out, b);
        }
        for lvl in &self.interior {
            for b in lvl {
                push_mat(&mut out, b);
            }
        }
        for b in &self.p_blocks {
            push_mat(&mut out, b);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Butterfly> {
        let mut pos = 0usize;
        let fail = |m: &str| Error::Parse { line: 0, message: alloc::string::String::from(m) };
        if bytes.len() < 4 + 4 * 8 || &bytes[0..4] != b"BFLY" {
            return Err(fail("bad butterfly header"));
        }
        pos += 4;
        let version = read_u64(bytes, &mut pos)?;
        if version != 1 {
            return Err(fail("unsupported butterfly format version"));
        }
        let m = read_u64(bytes, &mut pos)? as usize;
        let n = read_u64(bytes, &mut pos)? as usize;
        let levels = read_u64(bytes, &mut pos)? as usize;
        if levels > 32 {
            return Err(fail("implausible level count"));
        }
        let np = 1usize << levels;
        let mut ranks = Vec::with_capacity(levels + 1);
        for _ in 0..=levels {
            let mut lvl = Vec::with_capacity(np);
            for _ in 0..np {
                lvl.push(read_u64(bytes, &mut pos)? as usize);
            }
            ranks.push(lvl);
        }
        let row_bounds = split_bounds(m, levels);
        let col_bounds = split_bounds(n, levels);
        let read_mat = |pos: &mut usize, rows: usize, cols: usize| -> Result<CMat> {
            let need = rows * cols * 16;
            if *pos + need > bytes.len() {
                return Err(Error::Parse {
                    line: 0,
                    message: alloc::string::String::from("truncated butterfly data"),
                });
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let re = f64::from_le_bytes(bytes[*pos..*pos + 8].try_into().unwrap());
                let im = f64::from_le_bytes(bytes[*pos + 8..*pos + 16].try_into().unwrap());
                data.push(Complex64::new(re, im));
                *pos += 16;
            }
            Ok(CMat::from_rows(rows, cols, data))
        };
        let mut q_blocks = Vec::with_capacity(np);
        for k in 0..np {
            q_blocks.push(read_mat(&mut pos, ranks[0][k], col_bounds[k + 1] - col_bounds[k])?);
        }
        let mut interior = Vec::with_capacity(levels);
        for d in 1..=levels {
            let srcs = levels - d;
            let mut lvl = Vec::with_capacity(np);
            for p in 0..np {
                let j = p >> srcs;
                let k = p & ((1 << srcs) - 1);
                let c0 = ((j >> 1) << (srcs + 1)) | (2 * k);
                let cols = ranks[d - 1][c0] + ranks[d - 1][c0 | 1];
                lvl.push(read_mat(&mut pos, ranks[d][p], cols)?);
            }
            interior.push(lvl);
        }
        let mut p_blocks = Vec::with_capacity(np);
        for j in 0..np {
            p_blocks.push(read_mat(&mut pos, row_bounds[j + 1] - row_bounds[j], ranks[levels][j])?);
        }
        Ok(Butterfly::new_from_parts(m, n, levels, ranks, q_blocks, interior, p_blocks))
    }
}

fn prefix(v: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(v.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &x in v {
        acc += x;
        out.push(acc);
    }
    out
}

fn block_is_zero(x: &CMat, rows: Range<usize>) -> bool {
    for i in rows {
        for v in x.row(i) {
            if v.re != 0.0 || v.im != 0.0 {
                return false;
            }
        }
    }
    true
}

/// dst[dst_r0 + i, :] += Σ_k a[i, k] · src[src_r0 + k, :]
fn gemm_rows_into(dst: &mut CMat, dst_r0: usize, a: &CMat, src: &CMat, src_r0: usize) {
    let q = src.cols();
    debug_assert_eq!(dst.cols(), q);
    for i in 0..a.rows() {
        for k in 0..a.cols() {
            let aik = a[(i, k)];
            if aik.re == 0.0 && aik.im == 0.0 {
                continue;
            }
            let (di, si) = (dst_r0 + i, src_r0 + k);
            for c in 0..q {
                let upd = aik * src[(si, c)];
                dst[(di, c)] += upd;
            }
        }
    }
}

/// dst[dst_r0 + k, :] += Σ_i a[i, k] · src[src_r0 + i, :]  (aᵀ form)
fn gemm_rows_t_into(dst: &mut CMat, dst_r0: usize, a: &CMat, src: &CMat, src_r0: usize) {
    let q = src.cols();
    for i in 0..a.rows() {
        for k in 0..a.cols() {
            let aik = a[(i, k)];
            if aik.re == 0.0 && aik.im == 0.0 {
                continue;
            }
            let (di, si) = (dst_r0 + k, src_r0 + i);
            for c in 0..q {
                let upd = aik * src[(si, c)];
                dst[(di, c)] += upd;
            }
        }
    }
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn read_u64(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    if *pos + 8 > bytes.len() {
        return Err(Error::Parse {
            line: 0,
            message: alloc::string::String::from("truncated butterfly header"),
        });
    }
    let v = u64::from_le_bytes(bytes[*pos..*pos + 8].try_into().unwrap());
    *pos += 8;
    Ok(v)
}


#[cfg(test)]
mod tests {
    use super::test_support::{dense_from_factors, random_butterfly};
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn split_bounds_match_tree_convention() {
        assert_eq!(split_bounds(8, 2), vec![0, 2, 4, 6, 8]);
        assert_eq!(split_bounds(7, 2), vec![0, 2, 4, 6, 7]);
        assert_eq!(split_bounds(5, 1), vec![0, 3, 5]);
    }

    #[test]
    fn apply_matches_factor_product() {
        let mut rng = Rng::new(99);
        for &(m, n, l, r) in
            &[(24usize, 24usize, 0usize, 3usize), (32, 24, 1, 3), (40, 48, 2, 4), (64, 64, 3, 2)]
        {
            let b = random_butterfly(m, n, l, r, 1000 + l as u64);
            let dense = dense_from_factors(&b);
            let x = CMat::random(n, 3, &mut rng);
            let via_apply = b.apply(&x);
            let via_dense = dense.matmul(&x);
            let rel = via_apply.sub(&via_dense).frob_norm() / via_dense.frob_norm();
            assert!(rel < 1e-13, "L={l}: rel {rel}");
            let expanded = b.to_dense(None).unwrap();
            assert!(expanded.sub(&dense).frob_norm() <= 1e-13 * dense.frob_norm());
            // transpose apply against the dense transpose
            let y = CMat::random(m, 2, &mut rng);
            let tt = b.apply_transpose(&y);
            let td = dense.t_matmul(&y);
            assert!(tt.sub(&td).frob_norm() <= 1e-13 * td.frob_norm());
        }
    }

    #[test]
    fn apply_zero_and_linearity() {
        let b = random_butterfly(40, 40, 2, 3, 5);
        let zero = CMat::zeros(40, 2);
        assert_eq!(b.apply(&zero).frob_norm(), 0.0);
        let mut rng = Rng::new(6);
        let x = CMat::random(40, 2, &mut rng);
        let y = CMat::random(40, 2, &mut rng);
        let mut xy = x.clone();
        xy.axpy(Complex64::new(1.0, 0.0), &y);
        let lhs = b.apply(&xy);
        let mut rhs = b.apply(&x);
        rhs.axpy(Complex64::new(1.0, 0.0), &b.apply(&y));
        let rel = lhs.sub(&rhs).frob_norm() / lhs.frob_norm();
        assert!(rel < 1e-13);
    }

    #[test]
    fn transpose_is_adjoint_under_bilinear_pairing() {
        let b = random_butterfly(36, 28, 2, 3, 7);
        let mut rng = Rng::new(8);
        let x = CMat::random(28, 1, &mut rng);
        let y = CMat::random(36, 1, &mut rng);
        // <Bx, y> = <x, Bᵀy> with the unconjugated pairing
        let bx = b.apply(&x);
        let bty = b.apply_transpose(&y);
        let lhs = bx.t_matmul(&y)[(0, 0)];
        let rhs = x.t_matmul(&bty)[(0, 0)];
        assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm());
    }

    #[test]
    fn sub_apply_matches_slice_of_dense() {
        let b = random_butterfly(48, 40, 2, 3, 9);
        let dense = b.to_dense(None).unwrap();
        let mut rng = Rng::new(10);
        for &(rs, re, cs, ce) in
            &[(0usize, 48usize, 0usize, 40usize), (12, 24, 10, 20), (5, 33, 17, 39), (24, 36, 0, 10)]
        {
            let x = CMat::random(ce - cs, 2, &mut rng);
            let got = b.apply_sub(rs..re, cs..ce, &x);
            let want = dense.sub_block(rs..re, cs..ce).matmul(&x);
            assert!(
                got.sub(&want).frob_norm() <= 1e-12 * want.frob_norm().max(1e-300),
                "slice {rs}..{re} x {cs}..{ce}"
            );
            let yt = CMat::random(re - rs, 2, &mut rng);
            let got_t = b.apply_sub_t(rs..re, cs..ce, &yt);
            let want_t = dense.sub_block(rs..re, cs..ce).t_matmul(&yt);
            assert!(got_t.sub(&want_t).frob_norm() <= 1e-12 * want_t.frob_norm().max(1e-300));
        }
    }

    #[test]
    fn storage_stats_recount() {
        let b = random_butterfly(64, 64, 3, 3, 11);
        let stats = b.storage_stats();
        // independent recount from block dimensions
        let mut entries = 0;
        for k in 0..b.pairs() {
            entries += b.q_blocks[k].entry_count() + b.p_blocks[k].entry_count();
        }
        for lvl in &b.interior {
            for blk in lvl {
                entries += blk.entry_count();
            }
        }
        assert_eq!(stats.entries, entries);
        assert_eq!(stats.per_level_ranks.len(), 4);
        assert_eq!(stats.max_rank, 3);
        let z = Butterfly::zero(20, 20, 1);
        assert_eq!(z.storage_stats().max_rank, 0);
        assert_eq!(z.apply(&CMat::identity(20)).frob_norm(), 0.0);
    }

    #[test]
    fn low_rank_stats_formula() {
        let mut rng = Rng::new(12);
        let u = CMat::random(30, 4, &mut rng);
        let v = CMat::random(4, 20, &mut rng);
        let b = Butterfly::from_low_rank(u.clone(), v.clone());
        assert_eq!(b.storage_stats().entries, 4 * (30 + 20));
        let dense = b.to_dense(None).unwrap();
        assert!(dense.sub(&u.matmul(&v)).frob_norm() < 1e-13 * dense.frob_norm());
    }

    #[test]
    fn identity_like_expansion() {
        let b = Butterfly::from_low_rank(CMat::identity(5), CMat::identity(5));
        let d = b.to_dense(None).unwrap();
        assert!(d.sub(&CMat::identity(5)).frob_norm() < 1e-15);
    }

    #[test]
    fn bytes_roundtrip() {
        let b = random_butterfly(40, 36, 2, 3, 13);
        let bytes = b.to_bytes();
        let back = Butterfly::from_bytes(&bytes).unwrap();
        let x = CMat::random(36, 2, &mut Rng::new(14));
        assert_eq!(b.apply(&x), back.apply(&x));
        assert!(Butterfly::from_bytes(&bytes[..bytes.len() - 5]).is_err());
        assert!(Butterfly::from_bytes(b"JUNKJUNKJUNK").is_err());
    }

    #[test]
    fn dense_cap_enforced() {
        let b = random_butterfly(64, 64, 2, 2, 15);
        assert!(matches!(b.to_dense(Some(100)), Err(Error::DenseCapExceeded { .. })));
    }
}
