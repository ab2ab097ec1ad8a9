//! Training fixed-point neural networks with a SAT solver.
//!
//! A network with integer weights is compiled gate by gate into CNF, an
//! external solver searches for weights under which every training example
//! meets its margin, and the decoded weights are checked by an integer
//! interpreter that mirrors the circuit arithmetic.

pub mod arith;
pub mod cnf;
pub mod datasets;
pub mod driver;
pub mod encoder;
pub mod error;
pub mod params;
pub mod pipeline;
pub mod runtime;
pub mod seeds;

#[cfg(test)]
mod testkit;

pub use error::{Error, Result};
