//! O(N) loop models for decohered topological order: lattices, loop weights,
//! exact oracles, Monte Carlo, Kitaev-model free fermions and quantum doubles.

pub mod error;
pub mod experiment;
pub mod gf2;
pub mod kitaev;
pub mod lattice;
pub mod mc;
pub mod oracle;
pub mod qdouble;
pub mod weights;

pub use error::{Error, Result};
