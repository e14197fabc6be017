//! Spatial audio denoising: SNR mixing, STFT, the ratio-mask U-Net and its
//! training loop, and SI-SDR / spectrogram metrics.

pub mod metrics;
pub mod mix;
pub mod stft;
pub mod train;
pub mod unet;

pub use metrics::{si_sdr, si_sdri, stft_distance};
pub use mix::{mix_at_snr, Mixture};
pub use stft::{istft, stft, ComplexSpectrogram, STFT_BINS, STFT_HOP, STFT_NFFT, STFT_WINDOW};
pub use train::{train_denoiser, DenoiseModel, DenoiseTrainConfig, VisionMode};
pub use unet::{unet_forward, UNetConfig};
