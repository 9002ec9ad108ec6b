//! Error type shared across the pipeline.

/// Failure modes of the pipeline. The display form of every variant begins
/// with its name, which is what the CLI prints to stderr before exiting
/// non-zero.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A numeric bound or interval argument is out of order or out of range.
    #[error("InvalidRange: {0}")]
    InvalidRange(String),

    /// An input collection or image that must be non-empty is empty.
    #[error("EmptyInput: {0}")]
    EmptyInput(String),

    /// Array dimensions do not match what the operation requires.
    #[error("ShapeError: {0}")]
    ShapeError(String),

    /// A computation produced or encountered a non-finite value.
    #[error("NumericalError: {0}")]
    NumericalError(String),

    /// The operation was invoked in a configuration or phase it does not
    /// support.
    #[error("InvalidState: {0}")]
    InvalidState(String),

    /// Point sampling found no pixels above/below the candidate thresholds.
    #[error("NoEligiblePixels: {0}")]
    NoEligiblePixels(String),

    /// A point or mask prompt violates its bounds or domain.
    #[error("InvalidPrompt: {0}")]
    InvalidPrompt(String),

    /// A scalar or enumerated argument has an unsupported value.
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),

    /// A tile grid is internally inconsistent (count, sizes, or domains).
    #[error("InvalidGrid: {0}")]
    InvalidGrid(String),

    /// Input data on disk is missing, unreadable, or violates its contract.
    #[error("DataError: {0}")]
    DataError(String),

    /// A checkpoint file is truncated, misformatted, or fails its integrity
    /// invariants.
    #[error("CorruptCheckpoint: {0}")]
    CorruptCheckpoint(String),

    /// A checkpoint parses but does not match the model it is applied to.
    #[error("SchemaError: {0}")]
    SchemaError(String),

    /// Command-line or config usage error.
    #[error("UsageError: {0}")]
    UsageError(String),

    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),

    #[error("ImageError: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
