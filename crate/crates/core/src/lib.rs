//! Simulation and pulse design for quantum-ratchet transport in optical
//! superlattices.
//!
//! Energies and times are in units with `hbar = 1`; the band-structure module
//! works in recoil units with `k = 1`.

pub mod analytic;
pub mod bands;
pub mod control;
pub mod error;
pub mod hilbert;
pub mod propagator;
pub mod pulse;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
