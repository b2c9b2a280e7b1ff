// scaling probe for assemble/factorize/solve
use bfsolve_core::geometry::build_cluster_tree;
use bfsolve_core::hlu::{factorize, FactorOptions};
use bfsolve_core::hmatrix::{assemble, AssembleOptions};
use bfsolve_core::kernels::build_efie2d_system;
use bfsolve_core::rng::Rng;
use bfsolve_core::CMat;
use std::time::Instant;

fn main() {
    let sizes: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let sizes = if sizes.is_empty() { vec![2048, 4096, 8192] } else { sizes };
    for n in sizes {
        let ppw = 10.0;
        let k = 2.0 * std::f64::consts::PI;
        let radius = n as f64 / (k * ppw);
        let (spec, cloud) = build_efie2d_system(radius, k, ppw).unwrap();
        let tree = build_cluster_tree(&cloud, 256).unwrap();
        let spec = spec.bind_tree(&tree);
        let t0 = Instant::now();
        let h = assemble(&spec, &tree, 2.0, &AssembleOptions::default()).unwrap();
        let t_fill = t0.elapsed();
        let t1 = Instant::now();
        let f = match factorize(&h, &FactorOptions { seed: 1, ..FactorOptions::default() }) {
            Ok(f) => f,
            Err(e) => { println!("N={n} factorize FAILED: {e}"); continue; }
        };
        let t_fac = t1.elapsed();
        let mut rng = Rng::new(9);
        let rhs = CMat::random(h.n, 8, &mut rng);
        let t2 = Instant::now();
        let x = f.solve(&rhs);
        let t_solve = t2.elapsed() / 8;
        let resid = {
            let hx = h.apply(&x);
            hx.sub(&rhs).frob_norm() / rhs.frob_norm()
        };
        println!(
            "N={n} fill={:.2?} factor={:.2?} solve/rhs={:.2?} entriesZ={} entriesLU={} rankZ={} rankLU={} probe={:.1e} solveresid={:.1e}",
            t_fill, t_fac, t_solve, h.entries_stored(), f.entries_stored(),
            h.max_rank(), f.report.max_rank, f.report.probe_residual, resid
        );
    }
}
