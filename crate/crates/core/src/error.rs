use thiserror::Error;

/// Errors produced by the simulation and pulse-design routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("basis dimension {dimension} exceeds the configured cap of {cap}")]
    Capacity { dimension: u128, cap: usize },

    #[error("state does not belong to this basis: {0}")]
    BasisMismatch(String),

    #[error("invalid qubit amplitudes: |alpha|^2 + |beta|^2 = {norm}")]
    InvalidAmplitudes { norm: f64 },

    #[error("particle-number mismatch: {0}")]
    ParticleNumber(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("norm drift {drift:e} exceeds tolerance {tol:e} at t = {time}")]
    NormDrift { drift: f64, tol: f64, time: f64 },

    #[error("non-finite amplitude encountered at t = {time}")]
    NonFinite { time: f64 },

    #[error("target not reachable: {0}")]
    Unreachable(String),

    #[error("wavefunction not localised: {fraction:.4} of the norm in one half-cell")]
    NotLocalized { fraction: f64 },

    #[error("eigenvalues not converged under grid doubling: max change {change:e}")]
    NotConverged { change: f64 },

    #[error("value {value} outside the tabulated range [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
