//! Butterfly-compressed hierarchical matrices for oscillatory kernels.
//!
//! The crate provides the building blocks of a fast direct solver for
//! discretized oscillatory integral operators:
//!
//! - [`geometry`]: point clouds, the binary cluster tree over unknowns and
//!   the induced far/near block partition of the matrix.
//! - [`kernels`]: Helmholtz point kernels in 2D/3D, a 2D EFIE demo system
//!   and the analytic cylinder-scattering series used for validation.
//! - [`butterfly`]: the multilevel butterfly factored form, its direct
//!   construction from kernel entries by skeletonization, and fast
//!   (sub-block restricted) application.
//! - [`sketch`] / [`reconstruct`]: randomized reconstruction of a butterfly
//!   from black-box products, both the iterative sweep scheme and the
//!   non-iterative peeling scheme.
//! - [`hmatrix`] / [`hlu`]: the hierarchically partitioned compressed
//!   matrix, its block LU factorization with butterfly arithmetic, and
//!   forward/backward substitution for many right-hand sides.
//!
//! Everything here is `no_std` + `alloc`; IO, timing and the benchmark
//! driver live in the companion `bfsolve-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod butterfly;
pub mod error;
pub mod geometry;
pub mod hlu;
pub mod hmatrix;
pub mod kernels;
pub mod la;
pub mod op;
pub mod reconstruct;
pub mod rng;
pub mod sketch;

pub use error::Error;
pub use la::mat::CMat;
pub use num_complex::Complex64;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;
