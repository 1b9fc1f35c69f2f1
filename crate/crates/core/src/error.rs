use thiserror::Error;

/// Errors shared across the simulation and analysis modules.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A grid, model or run configuration violates a structural invariant.
    /// Raised before any computation starts.
    #[error("configuration error: {0}")]
    Config(String),

    /// Adaptive quadrature ran out of subdivisions before reaching the
    /// requested relative tolerance.
    #[error(
        "quadrature did not converge: achieved relative error {achieved:.3e} \
         (requested {requested:.3e}, {max_subdivisions} subdivision levels)"
    )]
    QuadratureNoConverge {
        achieved: f64,
        requested: f64,
        max_subdivisions: u32,
    },

    /// A marching scheme produced a non-finite value.
    #[error("numerical blow-up at time step {step}, cell {cell}")]
    NumericalBlowup { step: usize, cell: usize },

    /// The requested interval partition cannot satisfy its invariants.
    #[error("infeasible partition: {0}")]
    PartitionInfeasible(String),

    /// Input data are unusable (too few samples, non-finite entries, ...).
    #[error("data error: {0}")]
    Data(String),

    /// The caller combined artifacts in an unsupported way.
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;
