//! Adaptive two-grid P1/P0 finite elements for the constrained Dirichlet
//! boundary control of the Stokes equations.
//!
//! The crate is organized along the solver pipeline:
//! - [`mesh`]: conforming coarse/fine triangle pair with newest-vertex
//!   bisection refinement and boundary classification;
//! - [`fe`]: degree-of-freedom maps and assembled sparse operators;
//! - [`kkt`]: the coupled linear system of one active-set iteration;
//! - [`pdas`]: the outer primal-dual active-set loop;
//! - [`estimator`]: residual-type a posteriori indicators with contact
//!   stress and complementarity terms;
//! - [`adaptivity`]: the solve-estimate-mark-refine driver;
//! - [`benchmarks`]: manufactured problems with exact solutions and the
//!   error norms used by the convergence studies.

pub mod adaptivity;
pub mod benchmarks;
pub mod estimator;
pub mod fe;
pub mod geom;
pub mod kkt;
pub mod mesh;
pub mod parallel;
pub mod pdas;
pub mod sparse;
