//! Numerics for a power-law XXZ spin chain with blockade-induced positional
//! disorder: blockaded position sampling, fixed-magnetization exact
//! diagonalization, localization diagnostics and an effective model of
//! strongly interacting pairs.

pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod observables;
pub mod pairmodel;
pub mod spectrum;

pub use error::{Error, Result};
pub use geometry::{CouplingMatrix, PositionSample};
pub use pairmodel::{PairSet, PairState};
pub use spectrum::{SectorBasis, SpectrumResult};
