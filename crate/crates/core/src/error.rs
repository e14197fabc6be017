use thiserror::Error;

/// Errors produced by the core library.
#[derive(Error, Debug)]
pub enum CoreError {
    #[error("clip too short: got {got} samples, need at least {need}")]
    ClipTooShort { got: usize, need: usize },

    #[error("expected 2 channels, got {0}")]
    ChannelCount(usize),

    #[error("expected 16 kHz, got {rate} Hz ({file})")]
    SampleRate { rate: u32, file: String },

    #[error("spectrogram dims {dims:?} not divisible by patch {patch:?}; pad to {hint:?}")]
    IndivisibleDims {
        dims: (usize, usize),
        patch: (usize, usize),
        hint: (usize, usize),
    },

    #[error("empty clip")]
    EmptyClip,

    #[error("empty corpus iterator")]
    EmptyCorpus,

    #[error("degenerate corpus: zero variance")]
    DegenerateCorpus,

    #[error("token index {idx} out of range (Q={q})")]
    IndexOutOfRange { idx: usize, q: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no masked tokens: loss undefined for S=0")]
    NoMaskedTokens,

    #[error("invalid layer index {idx}: model has {layers} shared encoder layers")]
    InvalidLayer { idx: usize, layers: usize },

    #[error("undefined SNR: noise is silent")]
    SilentNoise,

    #[error("silent reference signal")]
    SilentReference,

    #[error("undefined AP: no positive labels")]
    NoPositives,

    #[error("non-finite loss at step {step}; offending clip ids: {clip_ids:?}")]
    NonFiniteLoss { step: usize, clip_ids: Vec<String> },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
