use thiserror::Error;

/// Errors raised by the numerical engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("tolerance not met: best estimate {estimate} with error estimate {error} after {subdivisions} subdivisions")]
    ToleranceNotMet {
        estimate: f64,
        error: f64,
        subdivisions: usize,
    },

    #[error("invalid integrand: non-finite sample {value} at r = {at}")]
    InvalidIntegrand { at: f64, value: f64 },

    #[error("divergent integral near r = {at} (partial estimate {estimate})")]
    Divergent { at: f64, estimate: f64 },

    #[error("invalid quadrature configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("invalid base density: {0}")]
    InvalidBaseDensity(String),

    #[error("undefined at origin")]
    UndefinedAtOrigin,

    #[error("radius {r} outside the domain [{lo}, {hi}]")]
    RadiusOutOfDomain { r: f64, lo: f64, hi: f64 },

    #[error("radius {r} below r_min = {r_min}; the density has no positive lower bound")]
    BelowMinimumRadius { r: f64, r_min: f64 },

    #[error("energy infinite (partial estimate {estimate})")]
    InfiniteEnergy { estimate: f64 },

    #[error("infinite norm (partial estimate {estimate})")]
    InfiniteNorm { estimate: f64 },

    #[error("energy overflow: log of the energy is {log_value}")]
    EnergyOverflow { log_value: f64 },

    #[error("parameter domain violation: {0}")]
    ParameterDomain(String),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("boundary violation: {0}")]
    BoundaryViolation(String),

    #[error("no admissible rays")]
    NoAdmissibleRays,

    #[error("fit refused: only {successful} successful rows, at least 3 are required")]
    FitRefused { successful: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
