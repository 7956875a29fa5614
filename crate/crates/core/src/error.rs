use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("invalid audio: {0}")]
    InvalidAudio(String),

    #[error("signal of {len} samples is shorter than one frame ({frame} samples)")]
    SignalTooShort { len: usize, frame: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input contains non-finite values")]
    NonFinite,

    #[error("MIDI pitch {0} outside the piano range 21..=108")]
    PitchOutOfRange(i64),

    #[error("duplicate MIDI label {0}")]
    DuplicateLabel(u8),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed MIDI file: {0}")]
    Midi(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}
