use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bit-stream length must be at least 1")]
    EmptyStream,
    #[error("bit-stream lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid bit-stream text: {0}")]
    ParseStream(String),
    #[error("precision of {0} bits is outside 2..=16")]
    InvalidPrecision(u32),
    #[error("stream length {0} is too short, need at least 2")]
    InvalidStreamLength(usize),

    #[error("LFSR state must be nonzero")]
    ZeroLfsrState,
    #[error("invalid LFSR configuration: {0}")]
    InvalidLfsr(String),
    #[error("value {value} is outside the comparator range 0..={max}")]
    ValueOutOfRange { value: u32, max: u32 },
    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error("adder tree needs at least one input")]
    EmptyTree,

    #[error("non-finite weight at tap {0}")]
    NonFiniteWeight(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty evaluation")]
    EmptyEvaluation,

    #[error("wrong magic: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },
    #[error("truncated input: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("label {value} at index {index} is outside 0..=9")]
    LabelOutOfRange { index: usize, value: u8 },

    #[error("not an SBNN weights file")]
    BadWeightsMagic,
    #[error("unsupported SBNN version {0}")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("unknown layer tag {0}")]
    UnknownLayerTag(u32),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
