//! Variable-order fractional calculus and free-terminal-time fractional
//! variational problems.
//!
//! The crate is layered bottom-up: [`expr`] parses the user's scalar
//! expressions, [`numerics`] holds the quadrature engine, [`fracops`]
//! implements the variable-order operators, [`varcalc`] evaluates the
//! functional and its necessary optimality conditions, and [`solver`] runs a
//! direct pattern-search minimisation.

pub mod error;
pub mod expr;
pub mod fracops;
pub mod numerics;
pub mod solver;
pub mod varcalc;

pub use error::{Error, Result};
