//! Wavelet-based edge multiscale finite elements combined with parareal time
//! integration for parabolic problems `∂u/∂t − ∇·(κ∇u) = f` on the unit square
//! with heterogeneous, high-contrast `κ`.

pub mod coeff;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod grid;
pub mod msfem;
pub mod parareal;
pub mod problem;
pub mod solver;
pub mod sparse;
pub mod time;
pub mod wavelets;

pub use error::{Error, Result};
