//! Random-scan and deterministic-scan coordinate ascent variational
//! inference (CAVI) for block-structured log-concave targets, together with
//! the constants and rate envelopes that govern its convergence.
//!
//! Two engines share one harness:
//!
//! * [`gaussian`] runs CAVI exactly on quadratic potentials.
//! * [`grid`] runs CAVI on polynomial potentials with one-dimensional blocks,
//!   representing each factor on a uniform grid.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod gaussian;
pub mod grid;
pub mod harness;
pub mod potential;

pub use error::{Error, Result};
pub use potential::{BlockStructure, MomentTable, Monomial, Polynomial1D, Potential};
