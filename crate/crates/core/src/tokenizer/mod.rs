//! Clip tokenization: Mel frontend, video tubelets, audio patches, stats.

pub mod audio;
pub mod mel;
pub mod stats;
pub mod video;

pub use audio::{detokenize_audio, tokenize_audio, AudioTokenGrid, AUDIO_TOKEN_DIM};
pub use mel::{compute_mel_pair, MelFilterbank, MelSpectrogramPair};
pub use stats::{compute_norm_stats, NormalizationStats, StatsAccumulator};
pub use video::{tokenize_video, VideoTokenGrid, PATCH_SIZE};
