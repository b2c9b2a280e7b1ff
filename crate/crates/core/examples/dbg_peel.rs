// non-iterative peel on direct-built Helmholtz butterflies
use bfsolve_core::butterfly::{construct_direct_ranges, DirectParams};
use bfsolve_core::geometry::{generate_geometry, PointCloud, ShapeSpec};
use bfsolve_core::kernels::{DiagonalRule, KernelKind, KernelSpec};
use bfsolve_core::reconstruct::reconstruct_noniterative;
use bfsolve_core::sketch::measure_residual;

fn opposite_arcs(n_per: usize, k: f64, span: f64) -> KernelSpec {
    let a = generate_geometry(&ShapeSpec::Arc { radius: 1.0, count: n_per, start: -span / 2.0, end: span / 2.0 }).unwrap();
    let b = generate_geometry(&ShapeSpec::Arc { radius: 1.0, count: n_per, start: core::f64::consts::PI - span / 2.0, end: core::f64::consts::PI + span / 2.0 }).unwrap();
    let mut pts = a.points().to_vec();
    pts.extend_from_slice(b.points());
    KernelSpec::new(KernelKind::Helmholtz2d, k, PointCloud::new(2, pts).unwrap(), DiagonalRule::Forbid)
}

fn main() {
    let span = core::f64::consts::PI * 0.45;
    for levels in 1..=7usize {
        let n_per = 32 << levels;
        let spacing = span / n_per as f64;
        let k = 2.0 * core::f64::consts::PI / (10.0 * spacing);
        let spec = opposite_arcs(n_per, k, span);
        let params = DirectParams { tol: 1e-4, chi_s: 3.0, max_rank: 160, seed: 11 };
        let b = construct_direct_ranges(&spec, n_per..2 * n_per, 0..n_per, levels, &params).unwrap();
        let r = ((b.storage_stats().max_rank as f64) * 1.2).ceil() as usize;
        match reconstruct_noniterative(&b, levels, r, 10, 55) {
            Ok((rec, rep)) => println!(
                "L={levels} n={n_per} rank={} r={r} closing={:.1e} fresh={:.1e}",
                b.storage_stats().max_rank, rep.residual, measure_residual(&rec, &b, 10, 999)),
            Err(e) => println!("L={levels} n={n_per} rank={} r={r} ERR {e}", b.storage_stats().max_rank),
        }
    }
}
