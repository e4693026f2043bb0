//! Lindblad dynamics of a qubit coupled to a finite mixed-field Ising bath,
//! with dissipation rates extracted from eigenstate-thermalization data and
//! checked against exact diagonalization of the full system.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod eth;
pub mod hamiltonian;
pub mod linalg;
pub mod pipeline;
pub mod runner;
pub mod spectra;
pub mod states;
pub mod thermo;

pub use error::{Error, Result};
