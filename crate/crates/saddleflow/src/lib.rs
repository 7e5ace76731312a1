//! saddleflow — gradient dynamics on concave-convex functions.
//!
//! The library simulates the primal-dual gradient flow
//! `dx/dt = φ_x, dy/dt = -φ_y` (plus gains-weighted, subspace-projected and
//! noise-perturbed variants), locates saddle points, computes the subspace
//! that carries every non-convergent limit trajectory, and turns the
//! structural facts about these flows (pathwise stability, conserved
//! quantities, variance blow-up under noise) into quantitative pass/fail
//! checks.
//!
//! Modules:
//! - [`subspace`]: tolerance-aware nullspaces, intersections, invariant
//!   subspaces and projectors.
//! - [`expm`]: dense matrix exponential (scaling and squaring, Padé).
//! - [`model`]: concave-convex problem forms and their derivative matrices.
//! - [`dynamics`]: adaptive Runge–Kutta flow integration, the linear limit
//!   flow, and Euler–Maruyama noise ensembles.
//! - [`analysis`]: saddle location, limit-subspace computation, kernel
//!   condition checks and convergence certificates.
//! - [`harness`]: reusable verification procedures with quantitative
//!   reports, plus random problem generators.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod expm;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod subspace;

pub use error::{Error, Result};
pub use subspace::{AffineSubspace, Subspace};
