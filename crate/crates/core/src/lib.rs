//! Spatial audio-visual self-supervision toolkit.
//!
//! Learns spatial representations from egocentric clips by inpainting masked
//! binaural spectrogram tokens conditioned on video, and feeds the learned
//! features to two downstream consumers: active speaker detection and spatial
//! audio denoising. A synthetic binaural scene generator provides desk-scale
//! data with verifiable spatial ground truth.

pub mod asd;
pub mod checkpoint;
pub mod clip;
pub mod denoise;
pub mod error;
pub mod masking;
pub mod model;
pub mod optim;
pub mod pretrain;
pub mod scenes;
pub mod schedule;
pub mod tokenizer;

pub use clip::RawClip;
pub use error::{CoreError, Result};
