//! Zeeman-energy change of a ²⁹Si nuclear-spin bath driven by single-qubit
//! X rotations on a ³¹P donor nuclear-spin qubit in silicon.

// `!(x > 0.0)` guards also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod cli;
pub mod config;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod hamiltonians;
pub mod hyperfine;
pub mod lattice;
pub mod model;
pub mod oracle;
pub mod sparse;

pub use error::{Error, Result};
