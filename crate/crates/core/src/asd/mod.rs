//! Active speaker detection on top of the pretrained features.

pub mod finetune;
pub mod fusion;
pub mod head;
pub mod map;
pub mod tracks;

use ndarray::Array4;

use crate::error::{CoreError, Result};

pub const CROP_SIZE: usize = 112;

/// One face track: per-frame crops, bounding boxes and activity labels.
#[derive(Debug, Clone)]
pub struct FaceTrack {
    pub clip_id: String,
    pub face_id: String,
    /// `T x 112 x 112 x 3` face crops aligned with the clip frames.
    pub crops: Array4<f32>,
    pub labels: Vec<bool>,
    /// Normalized (x, y, w, h) per frame.
    pub bboxes: Vec<[f32; 4]>,
}

impl FaceTrack {
    pub fn new(
        clip_id: impl Into<String>,
        face_id: impl Into<String>,
        crops: Array4<f32>,
        labels: Vec<bool>,
        bboxes: Vec<[f32; 4]>,
    ) -> Result<Self> {
        let t = crops.shape()[0];
        if crops.shape()[1] != CROP_SIZE || crops.shape()[2] != CROP_SIZE || crops.shape()[3] != 3 {
            return Err(CoreError::ShapeMismatch(format!(
                "face crops must be {CROP_SIZE}x{CROP_SIZE}x3, got {:?}",
                &crops.shape()[1..]
            )));
        }
        if labels.len() != t || bboxes.len() != t {
            return Err(CoreError::ShapeMismatch(format!(
                "track needs one label and bbox per frame: {} crops, {} labels, {} bboxes",
                t,
                labels.len(),
                bboxes.len()
            )));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            face_id: face_id.into(),
            crops,
            labels,
            bboxes,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.crops.shape()[0]
    }
}

/// Fusion decoder output width; 128 (TalkNet mode) and 512 (SPELL mode) are
/// the canonical sizes.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FusionConfig {
    pub out_dim: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { out_dim: 128 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.out_dim == 0 {
            return Err(CoreError::InvalidConfig("fusion out_dim must be > 0".into()));
        }
        Ok(())
    }
}

pub use finetune::{finetune_asd, AsdConfig, AsdModel, AsdReport, AsdSample};
pub use fusion::{fuse_features, init_fusion_params};
pub use head::{asd_forward, init_head_params};
pub use map::{
    evaluate_map, read_predictions_csv, write_predictions_csv, AsdPrediction,
};
pub use tracks::tracks_from_labels;
