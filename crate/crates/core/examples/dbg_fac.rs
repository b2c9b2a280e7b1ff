// replicate the 8k factorization failure with visibility into block reconstructions
use bfsolve_core::geometry::build_cluster_tree;
use bfsolve_core::hlu::{factorize, FactorOptions};
use bfsolve_core::hmatrix::{assemble, AssembleOptions};
use bfsolve_core::kernels::build_efie2d_system;

fn main() {
    let n = 8192usize;
    let ppw = 10.0;
    let k = 2.0 * std::f64::consts::PI;
    let radius = n as f64 / (k * ppw);
    let (spec, cloud) = build_efie2d_system(radius, k, ppw).unwrap();
    let tree = build_cluster_tree(&cloud, 256).unwrap();
    let spec = spec.bind_tree(&tree);
    let h = assemble(&spec, &tree, 2.0, &AssembleOptions::default()).unwrap();
    println!("assembled: entries {} rankZ {} ranks/level {:?}", h.entries_stored(), h.max_rank(), h.ranks_by_level());
    for eps in [1e-3f64] {
        let opts = FactorOptions { seed: 1, eps, ..FactorOptions::default() };
        match factorize(&h, &opts) {
            Ok(f) => println!("eps={eps:.0e}: OK probe={:.1e} rankLU={}", f.report.probe_residual, f.report.max_rank),
            Err(e) => println!("eps={eps:.0e}: FAIL {e}"),
        }
    }
}
