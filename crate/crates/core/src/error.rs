use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input stream; `offset` is the byte position where parsing stopped.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unknown wavelet '{name}' (valid: {valid})")]
    UnknownWavelet { name: String, valid: String },

    /// The estimated message has zero energy, so the correlation is undefined.
    #[error("degenerate estimate: no watermark energy")]
    DegenerateEstimate,

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// True for errors caused by bad user input rather than a failure while
    /// computing. The CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::Dimension(_)
            | Error::UnsupportedFormat(_)
            | Error::Argument(_)
            | Error::UnknownWavelet { .. }
            | Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
