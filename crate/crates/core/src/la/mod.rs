//! Small dense complex linear algebra used by the compression kernels.

pub mod lu;
pub mod mat;
pub mod qr;
pub mod svd;

pub use lu::DenseLu;
pub use mat::CMat;
pub use qr::rrqr_skeleton;
pub use svd::{pinv_trunc, singular_values};
