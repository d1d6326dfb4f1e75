use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("raster must be square, got {width}x{height}")]
    NotSquare { width: usize, height: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("degenerate input: raster has zero variance")]
    Degenerate,

    #[error("degenerate raster at index {index}")]
    DegenerateMember { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pad factor calibration failed for target F = {target}: {table:?}")]
    Calibration {
        target: f64,
        /// (pad_factor, mean measured F) for every factor that was tried.
        table: Vec<(usize, f64)>,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated file: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
