//! Numerical engine for multi-band diffusion on Laplacian pyramids.
//!
//! The forward process attenuates each pyramid band on its own schedule while
//! a single isotropic noise term grows; the backward pass integrates a
//! per-band probability-flow ODE and switches resolution when a band revives.
//! Everything is f64, deterministic under explicit seeds, and exercised by
//! closed-form denoising oracles.

pub mod denoiser;
pub mod field;
pub mod grid;
pub mod process;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod synth;
pub mod verify;

pub use field::Field;
pub use grid::Pyramid;

/// Unified error type for the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or divisibility violation on a grid operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid parameter or an inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A (level, sigma) query that no expert covers.
    #[error("routing error: {0}")]
    Routing(String),

    /// Non-finite values or a numerically impossible request.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
