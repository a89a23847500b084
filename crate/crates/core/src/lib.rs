//! Single-phase linear Biot poromechanics on structured grids.
//!
//! Displacements are discretized with nodal Q1 finite elements and pressures
//! with cell-centered finite volumes (TPFA fluxes, backward Euler in time).
//! The coupled system can be advanced monolithically or with the fixed-stress
//! split (non-iterative or iterated to convergence), with optional
//! pressure-jump stabilization of the inf-sup-unstable Q1-P0 pair.

pub mod cases;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod fvm;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod materials;
pub mod solvers;
pub mod verify;

pub use error::{Error, Result};
