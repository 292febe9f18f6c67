use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),

    #[error("shape does not fit inside the grid box: {0}")]
    ShapeDoesNotFit(String),

    #[error("domain has no interior cell")]
    EmptyInterior,

    #[error("field is not aligned with the grid")]
    MisalignedField,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("exponent out of range: {0}")]
    ExponentOutOfRange(String),

    #[error("omega contains no interior cell")]
    OmegaEmpty,

    #[error("delta must be positive, got {0}")]
    DeltaNonpositive(f64),

    #[error("exponent field has no U region")]
    MissingURegion,

    #[error("exponent field violates (H1): {0}")]
    InvalidExponentField(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("field has no positive part")]
    NonpositiveInput,

    #[error("could not bracket the Nehari scaling: {0}")]
    NoBracket(String),

    #[error("translated instanton center leaves the box for k = {0}")]
    OffsetOutsideBox(f64),

    #[error("radius {radius} is below the minimum {min}")]
    RadiusTooSmall { radius: f64, min: f64 },

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("invalid radii: {0}")]
    InvalidRadii(String),

    #[error("snapshot format error: {0}")]
    Snapshot(String),
}
