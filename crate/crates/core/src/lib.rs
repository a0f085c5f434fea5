//! # koopman-rkhs
//!
//! Mesh-free computation of principal Koopman eigenfunctions for autonomous
//! ODEs `ẋ = f(x)`. An eigenfunction `φ` with eigenvalue `λ` solves the
//! first-order transport equation
//!
//! ```text
//! f(x) · ∇φ(x) = λ φ(x)
//! ```
//!
//! and this crate attacks it through reproducing kernels built three ways:
//!
//! | Module | Route |
//! |--------|-------|
//! | [`variational`] | penalized collocation least squares in an RKHS |
//! | [`transport`] | Green's-function symmetrization and resolvent kernels for advection |
//! | [`path_integral`] | rank-one kernels from the truncated path-integral coordinate ξ |
//!
//! plus multiple kernel learning over the simplex ([`mkl`]) and discrete
//! Mercer decompositions with finite-rank and trajectory-integral checks
//! ([`spectral`]).
//!
//! ## Quick start
//!
//! ```
//! use koopman_rkhs::dynamics::SystemDef;
//! use koopman_rkhs::kernels::KernelSpec;
//! use koopman_rkhs::variational::{CollocationProblem, PenaltyConfig};
//! use koopman_rkhs::grid::uniform_grid;
//!
//! let sys = SystemDef::poly2d(-1.0, 3.0);
//! let points = uniform_grid(&[-1.0, -1.0], &[1.0, 1.0], &[21, 21]).unwrap();
//! let kernel = KernelSpec::polynomial(2, 0.5);
//! let problem = CollocationProblem::with_left_eigenvector(sys, -1.0, kernel, points, PenaltyConfig::default()).unwrap();
//! let solution = problem.solve().unwrap();
//! println!("rescaled rmse = {:?}", solution.diagnostics.rmse_rescaled);
//! ```

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod linalg;
pub mod mkl;
pub mod optim;
pub mod path_integral;
pub mod quadrature;
pub mod spectral;
pub mod transport;
pub mod variational;

pub use error::{Error, Result};
