//! Random sketches of black-box operators and sketch-based utilities:
//! drawing probe matrices, recovering the outer projection factors, and
//! the fresh-probe residual metric.

use alloc::vec::Vec;
use core::ops::Range;

use crate::error::Error;
use crate::la::mat::CMat;
use crate::op::LinearOperator;
use crate::rng::Rng;
use crate::Result;

/// Random probes and their images under an operator. Shapes follow the
/// sketch equations: `v_r` is n×n_rnd, `v_l` is n_rnd×m, `u_r = B·v_r`,
/// `u_l = v_l·B`.
#[derive(Clone, Debug)]
pub struct Sketch {
    pub v_r: CMat,
    pub v_l: CMat,
    pub u_r: CMat,
    pub u_l: CMat,
    pub n_rnd: usize,
    pub seed: u64,
}

/// Draw standard complex Gaussian probes and push them through `op`.
/// The same seed reproduces `v_r`, `v_l` bit for bit.
pub fn draw_sketch(op: &dyn LinearOperator, n_rnd: usize, seed: u64) -> Result<Sketch> {
    let (m, n) = (op.nrows(), op.ncols());
    let limit = m.min(n);
    if n_rnd > limit {
        return Err(Error::SketchTooWide { requested: n_rnd, limit });
    }
    let rng = Rng::new(seed);
    let v_r = CMat::random(n, n_rnd, &mut rng.derive(1));
    let v_lt = CMat::random(m, n_rnd, &mut rng.derive(2));
    let u_r = op.apply(&v_r);
    let u_lt = op.apply_transpose(&v_lt);
    Ok(Sketch { v_r, v_l: v_lt.transpose(), u_r, u_l: u_lt.transpose(), n_rnd, seed })
}

/// Internal column-major form of a sketch: left probes and responses are
/// kept transposed so every per-block operation slices rows.
pub(crate) struct SketchData {
    pub v_r: CMat,  // n × w
    pub u_r: CMat,  // m × w
    pub v_lt: CMat, // m × w
    pub u_lt: CMat, // n × w
}

impl SketchData {
    pub fn from_sketch(s: &Sketch) -> SketchData {
        SketchData {
            v_r: s.v_r.clone(),
            u_r: s.u_r.clone(),
            v_lt: s.v_l.transpose(),
            u_lt: s.u_l.transpose(),
        }
    }
}

/// Outer projection blocks recovered from a sketch via random block
/// projections: `P_i = U_{R,i}·(P̄ᵢᵀ U_{R,i})†` and the mirrored Q form.
/// `ranks_top`/`ranks_bottom` are the imposed per-block ranks at level L
/// and level 0.
pub fn recover_projections(
    sketch: &Sketch,
    levels: usize,
    ranks_top: &[usize],
    ranks_bottom: &[usize],
    seed: u64,
    pinv_tol: f64,
) -> Result<(Vec<CMat>, Vec<CMat>)> {
    let data = SketchData::from_sketch(sketch);
    let (m, n) = (data.u_r.rows(), data.u_lt.rows());
    let (p, q, _, _) = crate::reconstruct::projections_with_bars(
        &data,
        m,
        n,
        levels,
        ranks_top,
        ranks_bottom,
        seed,
        pinv_tol,
    )?;
    Ok((p, q))
}

/// Fresh-probe residual between two operators:
/// (‖A·X − B·X‖_F + ‖Aᵀ·Y − Bᵀ·Y‖_F) / (‖B·X‖_F + ‖Bᵀ·Y‖_F)
/// with X, Y drawn fresh from `seed`. Returns +∞ when the reference action
/// is zero but the candidate is not.
pub fn measure_residual(
    candidate: &dyn LinearOperator,
    reference: &dyn LinearOperator,
    n_probe: usize,
    seed: u64,
) -> f64 {
    assert!(n_probe >= 1);
    assert_eq!((candidate.nrows(), candidate.ncols()), (reference.nrows(), reference.ncols()));
    let rng = Rng::new(seed);
    let x = CMat::random(reference.ncols(), n_probe, &mut rng.derive(11));
    let yt = CMat::random(reference.nrows(), n_probe, &mut rng.derive(12));
    let bx = reference.apply(&x);
    let by = reference.apply_transpose(&yt);
    let ax = candidate.apply(&x);
    let ay = candidate.apply_transpose(&yt);
    let num = ax.sub(&bx).frob_norm() + ay.sub(&by).frob_norm();
    let den = bx.frob_norm() + by.frob_norm();
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    num / den
}

/// Support of a structured probe round and which side of the operator it
/// feeds. `Right` probes occupy source rows (columns of the operator),
/// `Left` probes occupy observer rows and travel through the transpose.
#[derive(Clone, Debug, PartialEq)]
pub enum Side {
    Right,
    Left,
}

#[derive(Clone, Debug)]
pub struct RoundSpec {
    pub side: Side,
    /// Row range of the probe support: a source range for `Right` rounds,
    /// an observer range for `Left` rounds.
    pub support: Range<usize>,
    pub width: usize,
    /// Stable tag; probe content is derived from (seed, tag) so batching
    /// across targets cannot change the numbers.
    pub tag: u64,
}

impl RoundSpec {
    /// Deterministic probe content for this round.
    pub fn content(&self, seed: u64) -> CMat {
        CMat::random(self.support.len(), self.width, &mut Rng::new(seed).derive(self.tag))
    }

    /// Zero-extended probe over the full operator side of length `full`.
    pub fn full_probe(&self, seed: u64, full: usize) -> CMat {
        let mut v = CMat::zeros(full, self.width);
        v.set_block(self.support.start, 0, &self.content(seed));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::butterfly::{split_bounds, test_support::random_butterfly, uniform_ranks};
    use crate::la::svd::pinv_trunc;
    use crate::rng::Rng;
    use num_complex::Complex64;

    #[test]
    fn identity_sketch_is_probes() {
        let id = CMat::identity(8);
        let s = draw_sketch(&id, 3, 42).unwrap();
        assert_eq!(s.u_r, s.v_r);
        assert_eq!(s.u_l, s.v_l);
        let again = draw_sketch(&id, 3, 42).unwrap();
        assert_eq!(s.v_r, again.v_r);
        assert_eq!(s.v_l, again.v_l);
        assert!(matches!(draw_sketch(&id, 9, 1), Err(Error::SketchTooWide { .. })));
    }

    #[test]
    fn dense_sketch_matches_product() {
        let mut rng = Rng::new(2);
        let a = CMat::random(16, 16, &mut rng);
        let s = draw_sketch(&a, 5, 7).unwrap();
        assert!(s.u_r.sub(&a.matmul(&s.v_r)).frob_norm() < 1e-12);
        assert!(s.u_l.sub(&s.v_l.matmul(&a)).frob_norm() < 1e-12);
    }

    #[test]
    fn projections_capture_column_spaces() {
        // operator is itself a butterfly with exact rank: the recovered
        // per-block projector must leave the response blocks unchanged
        let b = random_butterfly(48, 48, 2, 3, 77);
        let s = draw_sketch(&b, 3 * 3 + 6, 9).unwrap();
        let ranks = uniform_ranks(48, 48, 2, 3);
        let (p, q) = recover_projections(&s, 2, &ranks[2], &ranks[0], 5, 1e-12).unwrap();
        let bounds = split_bounds(48, 2);
        for j in 0..4 {
            let u = s.u_r.row_block(bounds[j]..bounds[j + 1]);
            let proj = p[j].matmul(&pinv_trunc(&p[j], 1e-12)).matmul(&u);
            let rel = proj.sub(&u).frob_norm() / u.frob_norm();
            assert!(rel < 1e-8, "block {j}: {rel}");
        }
        for k in 0..4 {
            let ut = s.u_l.col_block(bounds[k]..bounds[k + 1]).transpose();
            let qt = q[k].transpose();
            let proj = qt.matmul(&pinv_trunc(&qt, 1e-12)).matmul(&ut);
            let rel = proj.sub(&ut).frob_norm() / ut.frob_norm();
            assert!(rel < 1e-8, "q block {k}: {rel}");
        }
    }

    #[test]
    fn zero_operator_zero_projections() {
        let z = CMat::zeros(24, 24);
        let s = draw_sketch(&z, 6, 3).unwrap();
        let ranks = uniform_ranks(24, 24, 1, 3);
        let (p, q) = recover_projections(&s, 1, &ranks[1], &ranks[0], 4, 1e-12).unwrap();
        for b in p.iter().chain(&q) {
            assert_eq!(b.frob_norm(), 0.0);
        }
    }

    #[test]
    fn tight_square_case_is_well_conditioned() {
        // m = n = 2^L · r: every recovered projection block is square and
        // must stay invertible for a generic full-rank operator
        let (levels, r) = (2usize, 4usize);
        let n = (1 << levels) * r;
        let mut rng = Rng::new(8);
        let dense = CMat::random(n, n, &mut rng);
        let s = draw_sketch(&dense, n.min(r * 3 + 4), 21).unwrap();
        let ranks = uniform_ranks(n, n, levels, r);
        let (p, _q) = recover_projections(&s, levels, &ranks[levels], &ranks[0], 6, 1e-12).unwrap();
        for blk in &p {
            assert_eq!((blk.rows(), blk.cols()), (r, r));
            let sv = crate::la::svd::singular_values(blk);
            let cond = sv[0] / sv[r - 1];
            assert!(cond.is_finite() && cond < 1e8, "cond {cond}");
        }
    }

    #[test]
    fn residual_metric_cases() {
        let b = random_butterfly(32, 30, 1, 3, 5);
        assert!(measure_residual(&b, &b, 4, 99) < 1e-14);
        // candidate = op scaled by 2 gives exactly 1/2
        let dense = b.to_dense(None).unwrap();
        let double = dense.scaled(Complex64::new(2.0, 0.0));
        let r = measure_residual(&b, &double, 4, 100);
        assert!((r - 0.5).abs() < 1e-15, "r = {r}");
        // dense-computed ratio for a random mismatch
        let mut rng = Rng::new(101);
        let other = CMat::random(32, 30, &mut rng);
        let got = measure_residual(&other, &dense, 3, 55);
        let rng2 = Rng::new(55);
        let x = CMat::random(30, 3, &mut rng2.derive(11));
        let yt = CMat::random(32, 3, &mut rng2.derive(12));
        let want = (other.matmul(&x).sub(&dense.matmul(&x)).frob_norm()
            + other.t_matmul(&yt).sub(&dense.t_matmul(&yt)).frob_norm())
            / (dense.matmul(&x).frob_norm() + dense.t_matmul(&yt).frob_norm());
        assert!((got - want).abs() < 1e-12);
        // zero reference with nonzero candidate signals +infinity
        let z = CMat::zeros(32, 30);
        assert!(measure_residual(&dense, &z, 2, 1).is_infinite());
        assert_eq!(measure_residual(&z, &z, 2, 1), 0.0);
    }
}
