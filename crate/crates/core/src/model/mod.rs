//! The spatial audio-visual masked autoencoder.

pub mod batch;
pub mod blocks;
pub mod embed;
pub mod init;
pub mod mae;

pub use batch::BatchInput;
pub use init::{init_params, ParamStore};
pub use mae::{EncoderOutput, Prediction, SpatialMae};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    pub enc_layers_uni: usize,
    pub enc_layers_shared: usize,
    pub enc_dim: usize,
    pub enc_heads: usize,
    pub dec_layers_shared: usize,
    pub dec_layers_audio: usize,
    pub dec_dim: usize,
    pub dec_heads: usize,
    pub mlp_ratio: usize,
    /// Spatial patch edge for video tubelets.
    pub video_patch: usize,
    /// Frames per tubelet (= clip frame count).
    pub tubelet_depth: usize,
    /// Audio patch dims (time, mel).
    pub audio_patch: (usize, usize),
    /// Average the loss over all patch elements instead of summing within a
    /// token (off: literal token-summed MSE).
    pub per_element_loss: bool,
    /// Normalize each target patch to zero mean / unit std before the loss.
    pub patch_norm_targets: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enc_layers_uni: 8,
            enc_layers_shared: 6,
            enc_dim: 768,
            enc_heads: 12,
            dec_layers_shared: 1,
            dec_layers_audio: 3,
            dec_dim: 384,
            dec_heads: 6,
            mlp_ratio: 4,
            video_patch: 16,
            tubelet_depth: 5,
            audio_patch: (2, 16),
            per_element_loss: false,
            patch_norm_targets: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small profile for CPU smoke runs and tests.
    pub fn tiny(seed: u64) -> Self {
        Self {
            enc_layers_uni: 2,
            enc_layers_shared: 2,
            enc_dim: 96,
            enc_heads: 4,
            dec_layers_shared: 1,
            dec_layers_audio: 2,
            dec_dim: 64,
            dec_heads: 4,
            seed,
            ..Default::default()
        }
    }

    /// Minimal profile for gradient checks.
    pub fn grad_check(seed: u64) -> Self {
        Self {
            enc_layers_uni: 2,
            enc_layers_shared: 2,
            enc_dim: 32,
            enc_heads: 2,
            dec_layers_shared: 1,
            dec_layers_audio: 1,
            dec_dim: 32,
            dec_heads: 2,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_dim % self.enc_heads != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "enc_dim {} not divisible by enc_heads {}",
                self.enc_dim, self.enc_heads
            )));
        }
        if self.dec_dim % self.dec_heads != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "dec_dim {} not divisible by dec_heads {}",
                self.dec_dim, self.dec_heads
            )));
        }
        if self.enc_dim % 2 != 0 || self.dec_dim % 2 != 0 {
            return Err(CoreError::InvalidConfig(
                "embedding dims must be even for sinusoidal tables".into(),
            ));
        }
        Ok(())
    }

    pub fn video_token_dim(&self) -> usize {
        self.video_patch * self.video_patch * 3 * self.tubelet_depth
    }

    pub fn audio_token_dim(&self) -> usize {
        self.audio_patch.0 * self.audio_patch.1
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
