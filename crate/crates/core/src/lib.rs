//! Lattice Yang–Mills–Higgs fields, lattice 𝔤-valued Proca fields and the
//! log-coordinate lift between them, with the numerical checks that tie the
//! two together at finite lattice size.

pub mod compare;
pub mod continuum;
pub mod error;
pub mod exec;
pub mod field;
pub mod lattice;
pub mod lie;
pub mod proca;
pub mod rng;
pub mod sparse;
pub mod stats;
pub mod ymh;

pub use error::{Error, Result};
