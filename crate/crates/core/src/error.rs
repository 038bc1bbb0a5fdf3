use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid {width}x{height}: width must be even and >= 4, height >= 2")]
    InvalidGrid { width: usize, height: usize },
    #[error("zero-length vector cannot be projected to the sphere")]
    ZeroVector,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("view mismatch: {0}")]
    ViewMismatch(String),
    #[error("region selects no pixels")]
    EmptyRegion,
    #[error("bad magic tag in flow file")]
    BadMagic,
    #[error("flow file truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("flow file size mismatch: {0}")]
    SizeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable identifier, used by the CLI on stderr.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid { .. } => "InvalidGrid",
            Error::ZeroVector => "ZeroVector",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::ViewMismatch(_) => "ViewMismatch",
            Error::EmptyRegion => "EmptyRegion",
            Error::BadMagic => "BadMagic",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::SizeMismatch(_) => "SizeMismatch",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::NonFinite(_) => "NonFinite",
            Error::Image(_) => "Image",
            Error::Io(_) => "Io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
