use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("STS segment length must be in 1..=4096, got {0}")]
    StsLength(usize),
    #[error("STS template has {got} codes, packet expects {expected}")]
    StsMismatch { expected: usize, got: usize },
    #[error("payload of {len} bytes exceeds capacity of {capacity}")]
    PayloadCapacity { len: usize, capacity: usize },
    #[error("unsupported preamble code index {0}")]
    UnsupportedCodeIndex(u8),
    #[error("unsupported SFD index {0}")]
    UnsupportedSfd(u8),
    #[error("correlation window [{start}, {end}) exceeds capture of {len} samples")]
    TruncatedWindow { start: i64, end: i64, len: usize },
    #[error("invalid timestamps: {0}")]
    InvalidTimestamps(String),
    #[error("hop table is empty")]
    EmptyHopTable,
    #[error("invalid hop table: {0}")]
    InvalidHopTable(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
