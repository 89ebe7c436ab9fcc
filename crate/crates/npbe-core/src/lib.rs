//! Solver and verification toolkit for the complexified nonlinear
//! Poisson-Boltzmann equation (nPBE)
//!
//! ```text
//!   -div(eps(x) grad u) + kappa^2(x) sinh(u) = f   in Omega,
//!                                          u = g   on the boundary,
//! ```
//!
//! with complex-valued coefficients, data, and solution. The crate provides:
//!
//! * [`mesh`] — domains (interval/box/ball), structured grids, complex grid
//!   functions, and discrete L2/H1/H2/Linf norms plus a brute-force Gagliardo
//!   seminorm diagnostic;
//! * [`constants`] — the principal Dirichlet eigenvalue, explicit embedding
//!   constants `C_S`, operator-norm bounds `C_D` and `C_H`, the critical ball
//!   radius `M0`, and the smallness/contraction verdicts they feed;
//! * [`linear_pbe`] — assembly and direct solution of the complex linear part
//!   `L = -div(eps grad .) + kappa^2`, hypothesis checks, harmonic boundary
//!   lifts, and an empirical probe of the discrete `||L^-1||`;
//! * [`picard`] — the fixed-point operator `A(u) = L^-1(f - N(u) - Lw) + w`
//!   and its iteration with contraction and residual diagnostics;
//! * [`radial`] — the nonlinear spherical Bessel reduction on balls, its
//!   Hamiltonian structure, boundary radii, and non-uniqueness certificates;
//! * [`bifurcation`] — continuation of the nontrivial solution branch of the
//!   homogeneous scalar nPBE through the principal eigenvalue.

pub mod band;
pub mod bifurcation;
pub mod constants;
pub mod linear_pbe;
pub mod mesh;
pub mod picard;
pub mod radial;
pub mod rng;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error("linear solve failed: {0}")]
    SolveFailure(String),
    #[error("no convergence after {iterations} iterations ({context})")]
    NoConvergence { iterations: usize, context: String },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
