//! Point geometries, the binary cluster tree over unknowns, and the
//! far/near block partition of the matrix it induces.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::Error;
use crate::Result;

/// A set of 2D or 3D points (meters). 2D points carry a zero third component.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    dim: usize,
    pts: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(dim: usize, pts: Vec<[f64; 3]>) -> Result<Self> {
        if pts.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGeometry(format!("dimension {dim} not supported")));
        }
        Ok(PointCloud { dim, pts })
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        self.pts[i]
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.pts
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        dist(self.pts[i], self.pts[j])
    }

    /// Cloud with points rearranged as `out[k] = self[order[k]]`.
    pub fn reordered(&self, order: &[usize]) -> PointCloud {
        PointCloud { dim: self.dim, pts: order.iter().map(|&o| self.pts[o]).collect() }
    }
}

pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    libm::sqrt(d0 * d0 + d1 * d1 + d2 * d2)
}

/// Built-in shapes for the studies plus parsed point listings.
#[derive(Clone, Debug)]
pub enum ShapeSpec {
    /// Equi-angular points on a circle of the given radius.
    Circle { radius: f64, count: usize },
    /// Quasi-uniform (Fibonacci lattice) points on a sphere.
    Sphere { radius: f64, count: usize },
    /// Open circular arc between two angles (radians).
    Arc { radius: f64, count: usize, start: f64, end: f64 },
}

pub fn generate_geometry(spec: &ShapeSpec) -> Result<PointCloud> {
    match *spec {
        ShapeSpec::Circle { radius, count } => {
            check_shape(radius, count)?;
            let pts = (0..count)
                .map(|i| {
                    let t = 2.0 * core::f64::consts::PI * i as f64 / count as f64;
                    [radius * libm::cos(t), radius * libm::sin(t), 0.0]
                })
                .collect();
            PointCloud::new(2, pts)
        }
        ShapeSpec::Arc { radius, count, start, end } => {
            check_shape(radius, count)?;
            let pts = (0..count)
                .map(|i| {
                    let f = if count == 1 { 0.5 } else { i as f64 / (count - 1) as f64 };
                    let t = start + (end - start) * f;
                    [radius * libm::cos(t), radius * libm::sin(t), 0.0]
                })
                .collect();
            PointCloud::new(2, pts)
        }
        ShapeSpec::Sphere { radius, count } => {
            check_shape(radius, count)?;
            // Fibonacci lattice: deterministic and quasi-uniform.
            let golden = (1.0 + libm::sqrt(5.0)) / 2.0;
            let pts = (0..count)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let r = libm::sqrt((1.0 - z * z).max(0.0));
                    let phi = 2.0 * core::f64::consts::PI * (i as f64 / golden);
                    [radius * r * libm::cos(phi), radius * r * libm::sin(phi), radius * z]
                })
                .collect();
            PointCloud::new(3, pts)
        }
    }
}

fn check_shape(radius: f64, count: usize) -> Result<()> {
    if !(radius > 0.0) {
        return Err(Error::InvalidGeometry("radius must be positive".to_string()));
    }
    if count == 0 {
        return Err(Error::InvalidGeometry("point count must be at least 1".to_string()));
    }
    Ok(())
}

/// Parse a plain-text point listing: one point per line, 2 or 3
/// whitespace-separated reals, `#` lines ignored.
pub fn parse_points(text: &str) -> Result<PointCloud> {
    let mut pts: Vec<[f64; 3]> = Vec::new();
    let mut dim = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut vals = [0.0f64; 3];
        let mut count = 0;
        for tok in trimmed.split_whitespace() {
            if count == 3 {
                return Err(Error::Parse {
                    line: lineno,
                    message: "more than 3 coordinates".to_string(),
                });
            }
            vals[count] = tok.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad coordinate '{tok}'"),
            })?;
            count += 1;
        }
        if count < 2 {
            return Err(Error::Parse { line: lineno, message: "need 2 or 3 coordinates".to_string() });
        }
        if dim == 0 {
            dim = count;
        } else if dim != count {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {dim} coordinates, found {count}"),
            });
        }
        pts.push(vals);
    }
    if pts.is_empty() {
        return Err(Error::EmptyCloud);
    }
    PointCloud::new(dim, pts)
}

/// Render a cloud in the plain-text listing format.
pub fn format_points(cloud: &PointCloud) -> String {
    let mut out = String::new();
    for p in cloud.points() {
        if cloud.dim() == 2 {
            out.push_str(&format!("{:.17e} {:.17e}\n", p[0], p[1]));
        } else {
            out.push_str(&format!("{:.17e} {:.17e} {:.17e}\n", p[0], p[1], p[2]));
        }
    }
    out
}

pub type NodeId = usize;

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub level: usize,
    /// Contiguous index range in tree ordering.
    pub range: Range<usize>,
    pub center: [f64; 3],
    pub radius: f64,
    /// Children node ids; `None` for leaves.
    pub children: Option<(NodeId, NodeId)>,
}

/// Balanced binary cluster tree over a point cloud.
///
/// The tree records a permutation: `order[t]` is the original index of the
/// point at tree position `t`, and matrix indices follow tree order.
#[derive(Clone, Debug)]
pub struct ClusterTree {
    pub nodes: Vec<TreeNode>,
    /// Tree position -> original index.
    pub order: Vec<usize>,
    /// Original index -> tree position.
    pub inv_order: Vec<usize>,
    pub depth: usize,
    pub leaf_size: usize,
}

impl ClusterTree {
    pub fn root(&self) -> NodeId {
        0
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// Leaves in tree order.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            match self.nodes[id].children {
                None => out.push(id),
                Some((a, b)) => {
                    stack.push(b);
                    stack.push(a);
                }
            }
        }
        out
    }

    /// All nodes at the given level, in tree order.
    pub fn nodes_at_level(&self, level: usize) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].level == level).collect()
    }
}

fn bounding_box(pts: &[[f64; 3]], idx: &[usize]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in idx {
        for d in 0..3 {
            lo[d] = lo[d].min(pts[i][d]);
            hi[d] = hi[d].max(pts[i][d]);
        }
    }
    (lo, hi)
}

/// Build the cluster tree by repeated median splits along the longest
/// bounding-box axis (ties to the lowest axis index). The depth is the
/// smallest `L` with `leaf_size · 2^L ≥ N`, and every leaf sits at that
/// level with sizes differing by at most one.
pub fn build_cluster_tree(cloud: &PointCloud, leaf_size: usize) -> Result<ClusterTree> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if leaf_size == 0 {
        return Err(Error::InvalidGeometry("leaf_size must be at least 1".to_string()));
    }
    let n = cloud.len();
    let mut depth = 0usize;
    while (leaf_size << depth) < n {
        depth += 1;
    }
    // keep every leaf nonempty when leaf_size is tiny and N is ragged
    while depth > 0 && (1usize << depth) > n {
        depth -= 1;
    }
    let pts = cloud.points();
    let mut order: Vec<usize> = (0..n).collect();
    let mut nodes: Vec<TreeNode> = Vec::new();
    // recursion over (level, range); splits reorder `order` in place
    fn build(
        pts: &[[f64; 3]],
        order: &mut [usize],
        offset: usize,
        level: usize,
        depth: usize,
        nodes: &mut Vec<TreeNode>,
    ) -> NodeId {
        let (lo, hi) = bounding_box(pts, order);
        let center =
            [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
        let radius = order
            .iter()
            .map(|&i| dist(pts[i], center))
            .fold(0.0f64, f64::max);
        let id = nodes.len();
        nodes.push(TreeNode {
            level,
            range: offset..offset + order.len(),
            center,
            radius,
            children: None,
        });
        if level < depth {
            let mut axis = 0;
            let mut span = hi[0] - lo[0];
            for d in 1..3 {
                if hi[d] - lo[d] > span {
                    span = hi[d] - lo[d];
                    axis = d;
                }
            }
            let mid = (order.len() + 1) / 2;
            order.select_nth_unstable_by(mid, |&a, &b| {
                pts[a][axis].partial_cmp(&pts[b][axis]).unwrap().then(a.cmp(&b))
            });
            let (left, right) = order.split_at_mut(mid);
            let l = build(pts, left, offset, level + 1, depth, nodes);
            let r = build(pts, right, offset + mid, level + 1, depth, nodes);
            nodes[id].children = Some((l, r));
        }
        id
    }
    build(pts, &mut order, 0, 0, depth, &mut nodes);
    let mut inv = vec![0usize; n];
    for (t, &o) in order.iter().enumerate() {
        inv[o] = t;
    }
    Ok(ClusterTree { nodes, order, inv_order: inv, depth, leaf_size })
}

/// One ordered far-field block: observers are rows, sources are columns.
#[derive(Clone, Debug, PartialEq)]
pub struct FarPair {
    pub level: usize,
    pub obs: NodeId,
    pub src: NodeId,
}

/// The far/near tiling of the matrix induced by the tree and the
/// admissibility parameter χ.
#[derive(Clone, Debug)]
pub struct BlockPartition {
    pub far: Vec<FarPair>,
    /// Ordered near leaf pairs (obs, src), including self pairs.
    pub near: Vec<(NodeId, NodeId)>,
    pub chi: f64,
    pub warnings: Vec<String>,
}

pub fn admissible(tree: &ClusterTree, a: NodeId, b: NodeId, chi: f64) -> bool {
    let na = tree.node(a);
    let nb = tree.node(b);
    dist(na.center, nb.center) > chi * (na.radius + nb.radius)
}

/// Two same-level nodes (level ≥ 2) form a far pair when their center
/// distance exceeds χ times the sum of their radii and no ancestor pair is
/// far; leaf pairs not covered by a far pair become near pairs.
pub fn build_block_partition(tree: &ClusterTree, chi: f64) -> Result<BlockPartition> {
    if !(chi > 0.0) {
        return Err(Error::InvalidGeometry("chi must be positive".to_string()));
    }
    let mut warnings = Vec::new();
    if !(2.0..=4.0).contains(&chi) {
        warnings.push(format!("chi = {chi} outside the usual range [2, 4]"));
    }
    let mut part =
        BlockPartition { far: Vec::new(), near: Vec::new(), chi, warnings };
    fn descend(tree: &ClusterTree, part: &mut BlockPartition, obs: NodeId, src: NodeId) {
        let level = tree.node(obs).level;
        debug_assert_eq!(level, tree.node(src).level);
        if level >= 2 && admissible(tree, obs, src, part.chi) {
            part.far.push(FarPair { level, obs, src });
            return;
        }
        match (tree.node(obs).children, tree.node(src).children) {
            (Some((o1, o2)), Some((s1, s2))) => {
                descend(tree, part, o1, s1);
                descend(tree, part, o1, s2);
                descend(tree, part, o2, s1);
                descend(tree, part, o2, s2);
            }
            _ => part.near.push((obs, src)),
        }
    }
    descend(tree, &mut part, tree.root(), tree.root());
    Ok(part)
}
