use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed WAV: {0}")]
    MalformedWav(String),

    #[error("unsupported channel count: {0} (only mono is accepted)")]
    UnsupportedChannelCount(u16),

    #[error("unsupported encoding: {0} (only 16-bit integer PCM is accepted)")]
    UnsupportedEncoding(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("input too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("length mismatch: {left} samples vs {right} samples")]
    LengthMismatch { left: usize, right: usize },

    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },

    #[error("{0} has zero energy")]
    ZeroEnergy(&'static str),

    #[error("no voiced frames: every reference frame is silent")]
    NoVoicedFrames,

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Attach the offending file path, unless one is already attached.
    pub fn at(self, path: impl Into<PathBuf>) -> Error {
        match self {
            located @ Error::File { .. } => located,
            other => Error::File {
                path: path.into(),
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, with any path context removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code for the CLI: 2 usage/config, 3 I/O, 4 numeric or contract violation.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            Error::Io(_)
            | Error::MalformedWav(_)
            | Error::UnsupportedChannelCount(_)
            | Error::UnsupportedEncoding(_) => 3,
            Error::File { .. } => unreachable!(),
            Error::TooShort { .. }
            | Error::LengthMismatch { .. }
            | Error::SampleRateMismatch { .. }
            | Error::ZeroEnergy(_)
            | Error::NoVoicedFrames
            | Error::ContractViolation(_) => 4,
        }
    }
}

impl From<hound::Error> for Error {
    fn from(err: hound::Error) -> Self {
        match err {
            hound::Error::IoError(e) => Error::Io(e),
            hound::Error::FormatError(msg) => Error::MalformedWav(msg.to_string()),
            hound::Error::Unsupported => {
                Error::UnsupportedEncoding("unsupported WAV feature".into())
            }
            other => Error::MalformedWav(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
