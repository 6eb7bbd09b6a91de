use thiserror::Error;

use crate::io::tfm::TfmError;
use crate::io::wav::WavError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty waveform")]
    EmptyWaveform,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("channel {channel} out of range for {channels} channel(s)")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("too few frames: need more than {needed}, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("matrix is not positive definite at frequency bin {bin}")]
    NotPositiveDefinite { bin: usize },
    #[error("silent signal: {0}")]
    Silent(&'static str),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Tfm(#[from] TfmError),
    #[error("manifest line {line}: {source}")]
    Manifest {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
