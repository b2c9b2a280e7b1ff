//! The hierarchically partitioned compressed matrix: a block tree whose
//! far leaves are butterflies and near leaves dense, mirroring the cluster
//! tree's far/near partition.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::ops::Range;

use crate::butterfly::{construct_direct_ranges, Butterfly, DirectParams};
use crate::error::Error;
use crate::geometry::{admissible, ClusterTree, NodeId};
use crate::kernels::KernelSpec;
use crate::la::mat::CMat;
use crate::op::LinearOperator;
use crate::Result;

#[derive(Clone, Debug)]
pub enum HKind {
    Dense(CMat),
    Butterfly(Butterfly),
    /// Children in row-major order: (r0,c0), (r0,c1), (r1,c0), (r1,c1).
    Split(Box<[HNode; 4]>),
}

/// One block of the hierarchical tiling, with absolute index ranges.
#[derive(Clone, Debug)]
pub struct HNode {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    /// Partition level of this block (tree level of its row/col nodes).
    pub level: usize,
    pub kind: HKind,
}

#[derive(Clone, Copy, Debug)]
pub struct AssembleOptions {
    /// Relative compression tolerance of the far blocks.
    pub tol: f64,
    /// Observer oversampling factor for skeleton sampling.
    pub chi_s: f64,
    pub r_max: usize,
    pub seed: u64,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions { tol: 1e-4, chi_s: 3.0, r_max: 192, seed: 0 }
    }
}

/// Hierarchically compressed square matrix over tree-ordered indices.
#[derive(Clone, Debug)]
pub struct HMatrix {
    pub root: HNode,
    pub n: usize,
    /// Cluster tree depth (leaf level).
    pub depth: usize,
    pub chi: f64,
}

/// Build the compressed matrix: far pairs (same admissibility recursion as
/// the block partition) become butterflies with `L = depth - level`, leaf
/// pairs become dense blocks.
pub fn assemble(
    kernel: &KernelSpec,
    tree: &ClusterTree,
    chi: f64,
    opts: &AssembleOptions,
) -> Result<HMatrix> {
    if !(chi > 0.0) {
        return Err(Error::InvalidGeometry(alloc::string::String::from("chi must be positive")));
    }
    let root = assemble_node(kernel, tree, tree.root(), tree.root(), chi, opts)?;
    Ok(HMatrix { root, n: tree.n(), depth: tree.depth, chi })
}

fn assemble_node(
    kernel: &KernelSpec,
    tree: &ClusterTree,
    obs: NodeId,
    src: NodeId,
    chi: f64,
    opts: &AssembleOptions,
) -> Result<HNode> {
    let on = tree.node(obs);
    let sn = tree.node(src);
    let level = on.level;
    let rows = on.range.clone();
    let cols = sn.range.clone();
    if level >= 2 && admissible(tree, obs, src, chi) {
        let levels = tree.depth - level;
        let params = DirectParams {
            tol: opts.tol,
            chi_s: opts.chi_s,
            max_rank: opts.r_max,
            seed: opts.seed ^ (rows.start as u64).rotate_left(17) ^ cols.start as u64,
        };
        let bf = construct_direct_ranges(kernel, rows.clone(), cols.clone(), levels, &params)?;
        return Ok(HNode { rows, cols, level, kind: HKind::Butterfly(bf) });
    }
    match (tree.node(obs).children, tree.node(src).children) {
        (Some((o1, o2)), Some((s1, s2))) => {
            let children = Box::new([
                assemble_node(kernel, tree, o1, s1, chi, opts)?,
                assemble_node(kernel, tree, o1, s2, chi, opts)?,
                assemble_node(kernel, tree, o2, s1, chi, opts)?,
                assemble_node(kernel, tree, o2, s2, chi, opts)?,
            ]);
            Ok(HNode { rows, cols, level, kind: HKind::Split(children) })
        }
        _ => {
            let dense = kernel.eval_block(rows.clone(), cols.clone())?;
            Ok(HNode { rows, cols, level, kind: HKind::Dense(dense) })
        }
    }
}

impl HNode {
    /// y[rows] += self · x[cols], with x/y spanning the node's own ranges.
    fn apply_into(&self, x: &CMat, x0: usize, y: &mut CMat, y0: usize) {
        match &self.kind {
            HKind::Dense(d) => {
                let xb = x.row_block(self.cols.start - x0..self.cols.end - x0);
                if xb.frob_norm() == 0.0 {
                    return;
                }
                y.add_block(self.rows.start - y0, 0, &d.matmul(&xb));
            }
            HKind::Butterfly(b) => {
                let xb = x.row_block(self.cols.start - x0..self.cols.end - x0);
                y.add_block(self.rows.start - y0, 0, &b.apply(&xb));
            }
            HKind::Split(ch) => {
                for c in ch.iter() {
                    c.apply_into(x, x0, y, y0);
                }
            }
        }
    }

    fn apply_t_into(&self, y: &CMat, y0: usize, x: &mut CMat, x0: usize) {
        match &self.kind {
            HKind::Dense(d) => {
                let yb = y.row_block(self.rows.start - y0..self.rows.end - y0);
                if yb.frob_norm() == 0.0 {
                    return;
                }
                x.add_block(self.cols.start - x0, 0, &d.t_matmul(&yb));
            }
            HKind::Butterfly(b) => {
                let yb = y.row_block(self.rows.start - y0..self.rows.end - y0);
                x.add_block(self.cols.start - x0, 0, &b.apply_transpose(&yb));
            }
            HKind::Split(ch) => {
                for c in ch.iter() {
                    c.apply_t_into(y, y0, x, x0);
                }
            }
        }
    }

    /// Y = self[rows ∩ r, cols ∩ c] · X over absolute ranges.
    pub fn apply_sub(&self, r: Range<usize>, c: Range<usize>, x: &CMat) -> CMat {
        debug_assert_eq!(x.rows(), c.len());
        let mut y = CMat::zeros(r.len(), x.cols());
        self.apply_sub_into(&r, &c, x, &mut y);
        y
    }

    fn apply_sub_into(&self, r: &Range<usize>, c: &Range<usize>, x: &CMat, y: &mut CMat) {
        let rlo = self.rows.start.max(r.start);
        let rhi = self.rows.end.min(r.end);
        let clo = self.cols.start.max(c.start);
        let chi = self.cols.end.min(c.end);
        if rlo >= rhi || clo >= chi {
            return;
        }
        match &self.kind {
            HKind::Dense(d) => {
                let xb = x.row_block(clo - c.start..chi - c.start);
                let db = d.sub_block(
                    rlo - self.rows.start..rhi - self.rows.start,
                    clo - self.cols.start..chi - self.cols.start,
                );
                y.add_block(rlo - r.start, 0, &db.matmul(&xb));
            }
            HKind::Butterfly(b) => {
                let xb = x.row_block(clo - c.start..chi - c.start);
                let yb = b.apply_sub(
                    rlo - self.rows.start..rhi - self.rows.start,
                    clo - self.cols.start..chi - self.cols.start,
                    &xb,
                );
                y.add_block(rlo - r.start, 0, &yb);
            }
            HKind::Split(ch) => {
                for child in ch.iter() {
                    child.apply_sub_into(r, c, x, y);
                }
            }
        }
    }

    /// X = self[rows ∩ r, cols ∩ c]ᵀ · Y over absolute ranges.
    pub fn apply_sub_t(&self, r: Range<usize>, c: Range<usize>, y: &CMat) -> CMat {
        debug_assert_eq!(y.rows(), r.len());
        let mut x = CMat::zeros(c.len(), y.cols());
        self.apply_sub_t_into(&r, &c, y, &mut x);
        x
    }

    fn apply_sub_t_into(&self, r: &Range<usize>, c: &Range<usize>, y: &CMat, x: &mut CMat) {
        let rlo = self.rows.start.max(r.start);
        let rhi = self.rows.end.min(r.end);
        let clo = self.cols.start.max(c.start);
        let chi = self.cols.end.min(c.end);
        if rlo >= rhi || clo >= chi {
            return;
        }
        match &self.kind {
            HKind::Dense(d) => {
                let yb = y.row_block(rlo - r.start..rhi - r.start);
                let db = d.sub_block(
                    rlo - self.rows.start..rhi - self.rows.start,
                    clo - self.cols.start..chi - self.cols.start,
                );
                x.add_block(clo - c.start, 0, &db.t_matmul(&yb));
            }
            HKind::Butterfly(b) => {
                let yb = y.row_block(rlo - r.start..rhi - r.start);
                let xb = b.apply_sub_t(
                    rlo - self.rows.start..rhi - self.rows.start,
                    clo - self.cols.start..chi - self.cols.start,
                    &yb,
                );
                x.add_block(clo - c.start, 0, &xb);
            }
            HKind::Split(ch) => {
                for child in ch.iter() {
                    child.apply_sub_t_into(r, c, y, x);
                }
            }
        }
    }

    pub fn entries_stored(&self) -> usize {
        match &self.kind {
            HKind::Dense(d) => d.entry_count(),
            HKind::Butterfly(b) => b.storage_stats().entries,
            HKind::Split(ch) => ch.iter().map(|c| c.entries_stored()).sum(),
        }
    }

    /// Visit every leaf (dense and butterfly) in tree order.
    pub fn visit_leaves<'a>(&'a self, f: &mut impl FnMut(&'a HNode)) {
        match &self.kind {
            HKind::Split(ch) => {
                for c in ch.iter() {
                    c.visit_leaves(f);
                }
            }
            _ => f(self),
        }
    }

    /// Maximum butterfly rank per partition level, indexed by level.
    pub fn rank_by_level(&self, out: &mut Vec<usize>) {
        match &self.kind {
            HKind::Butterfly(b) => {
                if out.len() <= self.level {
                    out.resize(self.level + 1, 0);
                }
                out[self.level] = out[self.level].max(b.storage_stats().max_rank);
            }
            HKind::Split(ch) => {
                for c in ch.iter() {
                    c.rank_by_level(out);
                }
            }
            HKind::Dense(_) => {}
        }
    }
}

impl HMatrix {
    /// Y = H · X in tree ordering.
    pub fn apply(&self, x: &CMat) -> CMat {
        assert_eq!(x.rows(), self.n, "hmatrix apply shape");
        let mut y = CMat::zeros(self.n, x.cols());
        self.root.apply_into(x, 0, &mut y, 0);
        y
    }

    pub fn apply_transpose(&self, y: &CMat) -> CMat {
        assert_eq!(y.rows(), self.n, "hmatrix transpose apply shape");
        let mut x = CMat::zeros(self.n, y.cols());
        self.root.apply_t_into(y, 0, &mut x, 0);
        x
    }

    pub fn entries_stored(&self) -> usize {
        self.root.entries_stored()
    }

    pub fn max_rank(&self) -> usize {
        let mut by_level = Vec::new();
        self.root.rank_by_level(&mut by_level);
        by_level.into_iter().max().unwrap_or(0)
    }

    /// Maximum butterfly rank per partition level.
    pub fn ranks_by_level(&self) -> Vec<usize> {
        let mut by_level = Vec::new();
        self.root.rank_by_level(&mut by_level);
        by_level
    }

    /// Dense expansion for oracle comparisons (test-sized problems only).
    pub fn to_dense(&self, cap: Option<usize>) -> Result<CMat> {
        let cap = cap.unwrap_or(16_000_000);
        if self.n * self.n > cap {
            return Err(Error::DenseCapExceeded { entries: self.n * self.n, cap });
        }
        Ok(self.apply(&CMat::identity(self.n)))
    }
}

impl LinearOperator for HMatrix {
    fn nrows(&self) -> usize {
        self.n
    }
    fn ncols(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &CMat) -> CMat {
        HMatrix::apply(self, x)
    }
    fn apply_transpose(&self, y: &CMat) -> CMat {
        HMatrix::apply_transpose(self, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_block_partition, build_cluster_tree, generate_geometry, ShapeSpec};
    use crate::kernels::{DiagonalRule, KernelKind};
    use crate::rng::Rng;
    use num_complex::Complex64;

    fn circle_kernel(n: usize, k: f64) -> (KernelSpec, ClusterTree) {
        let cloud = generate_geometry(&ShapeSpec::Circle { radius: 1.0, count: n }).unwrap();
        let tree = build_cluster_tree(&cloud, 32).unwrap();
        let spec = KernelSpec::new(
            KernelKind::Helmholtz2d,
            k,
            cloud,
            DiagonalRule::Fixed(Complex64::new(1.0, 0.25)),
        )
        .bind_tree(&tree);
        (spec, tree)
    }

    #[test]
    fn identity_kernel_gives_identity_action() {
        let cloud = generate_geometry(&ShapeSpec::Circle { radius: 1.0, count: 256 }).unwrap();
        let tree = build_cluster_tree(&cloud, 16).unwrap();
        let spec =
            KernelSpec::new(KernelKind::Identity, 0.0, cloud, DiagonalRule::Forbid).bind_tree(&tree);
        let h = assemble(&spec, &tree, 2.0, &AssembleOptions::default()).unwrap();
        // far butterflies are all zero
        let mut far_entries = 0;
        h.root.visit_leaves(&mut |leaf| {
            if let HKind::Butterfly(b) = &leaf.kind {
                far_entries += b.storage_stats().entries;
            }
        });
        assert_eq!(far_entries, 0);
        let mut rng = Rng::new(5);
        let x = CMat::random(256, 3, &mut rng);
        let y = h.apply(&x);
        assert!(y.sub(&x).frob_norm() < 1e-13);
    }

    #[test]
    fn helmholtz_circle_matches_dense() {
        let (spec, tree) = circle_kernel(512, 40.0);
        let h = assemble(&spec, &tree, 2.0, &AssembleOptions::default()).unwrap();
        let dense = spec.eval_block(0..512, 0..512).unwrap();
        let mut rng = Rng::new(7);
        let x = CMat::random(512, 4, &mut rng);
        let hy = h.apply(&x);
        let dy = dense.matmul(&x);
        let rel = hy.sub(&dy).frob_norm() / dy.frob_norm();
        assert!(rel <= 1e-3, "matvec rel err {rel:.2e}");
        // transpose agreement
        let ht = h.apply_transpose(&x);
        let dt = dense.t_matmul(&x);
        assert!(ht.sub(&dt).frob_norm() / dt.frob_norm() <= 1e-3);
        // zero and linearity
        assert_eq!(h.apply(&CMat::zeros(512, 2)).frob_norm(), 0.0);
        let y2 = CMat::random(512, 4, &mut rng);
        let mut xy = x.clone();
        xy.axpy(Complex64::new(1.0, 0.0), &y2);
        let lhs = h.apply(&xy);
        let mut rhs = h.apply(&x);
        rhs.axpy(Complex64::new(1.0, 0.0), &h.apply(&y2));
        assert!(lhs.sub(&rhs).frob_norm() <= 1e-12 * lhs.frob_norm());
        // leaf coverage equals the induced block partition exactly
        let part = build_block_partition(&tree, 2.0).unwrap();
        let mut leaves = 0usize;
        h.root.visit_leaves(&mut |_| leaves += 1);
        assert_eq!(leaves, part.far.len() + part.near.len());
        // compressed well below dense
        assert!(h.entries_stored() < 512 * 512 / 2);
    }

    #[test]
    fn sub_applies_match_dense_slices() {
        let (spec, tree) = circle_kernel(256, 25.0);
        let h = assemble(&spec, &tree, 2.0, &AssembleOptions::default()).unwrap();
        let dense = spec.eval_block(0..256, 0..256).unwrap();
        let mut rng = Rng::new(9);
        for &(r0, r1, c0, c1) in &[(0usize, 64usize, 128usize, 256usize), (32, 160, 10, 100), (200, 256, 0, 256)] {
            let x = CMat::random(c1 - c0, 2, &mut rng);
            let got = h.root.apply_sub(r0..r1, c0..c1, &x);
            let want = dense.sub_block(r0..r1, c0..c1).matmul(&x);
            let denom = want.frob_norm().max(1e-30);
            assert!(got.sub(&want).frob_norm() / denom <= 2e-3, "slice ({r0},{r1})x({c0},{c1})");
            let yt = CMat::random(r1 - r0, 2, &mut rng);
            let got_t = h.root.apply_sub_t(r0..r1, c0..c1, &yt);
            let want_t = dense.sub_block(r0..r1, c0..c1).t_matmul(&yt);
            assert!(got_t.sub(&want_t).frob_norm() / want_t.frob_norm().max(1e-30) <= 2e-3);
        }
    }

    #[test]
    fn storage_scaling_stays_quasilinear() {
        // entries / (N log2^2 N) varies by < 2x across octaves
        let mut ratios = alloc::vec::Vec::new();
        for &n in &[256usize, 512, 1024] {
            let (spec, tree) = circle_kernel(n, 0.08 * n as f64);
            let h = assemble(&spec, &tree, 2.0, &AssembleOptions::default()).unwrap();
            let log2n = libm::log2(n as f64);
            ratios.push(h.entries_stored() as f64 / (n as f64 * log2n * log2n));
        }
        let max = ratios.iter().cloned().fold(0.0f64, f64::max);
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min < 2.0, "ratios {ratios:?}");
    }
}
