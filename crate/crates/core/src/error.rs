use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("invalid spin state: {0}")]
    InvalidState(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("waveform undersampled: {0}")]
    UndersampledWaveform(String),
    #[error("waveform has no declared carrier")]
    MissingCarrier,
    #[error("noise trajectory of {samples} samples exceeds the limit of {limit}")]
    TrajectoryTooLong { samples: u64, limit: u64 },
    #[error("infeasible timing: {0}")]
    InfeasibleTiming(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("envelope extraction failed: {0}")]
    EnvelopeExtractionFailed(String),
    #[error("slope below numerical floor: {0}")]
    SlopeTooSmall(String),
    #[error("trajectory {index} at time point {point}: {source}")]
    Trajectory {
        point: usize,
        index: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("preset error: {0}")]
    Preset(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
