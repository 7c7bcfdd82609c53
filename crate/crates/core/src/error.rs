use thiserror::Error;

/// Errors produced by the codec.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A code fell outside the declared alphabet. Coordinates name the tile
    /// (grid y, grid x, channel z) holding the offending value.
    #[error("code {value} at tile (y={y}, x={x}, z={z}) is outside the alphabet")]
    OutOfAlphabet {
        y: usize,
        x: usize,
        z: usize,
        value: i32,
    },

    /// Malformed file content; `offset` is the byte position where parsing failed.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    /// The bitstream was produced with a different dictionary than the one supplied.
    #[error("dictionary digest mismatch: stream expects {expected:#018x}, got {actual:#018x}")]
    DictionaryMismatch { expected: u64, actual: u64 },

    /// Checksum failure: the stream bytes were altered after encoding.
    #[error("corruption detected: {0}")]
    Corruption(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(offset: usize, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }
}
