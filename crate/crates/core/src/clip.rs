//! The raw clip type: one second of egocentric video plus binaural audio.

use ndarray::{Array2, Array4};

use crate::error::{CoreError, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const CLIP_FPS: usize = 5;

/// One unit of processing: `T` video frames and a 2-channel waveform.
///
/// Frames are `T x H x W x 3` with pixel values in `[0, 1]`; the waveform is
/// `2 x N` with samples in `[-1, 1]` at 16 kHz, channel order (left, right).
#[derive(Debug, Clone)]
pub struct RawClip {
    pub frames: Array4<f32>,
    pub waveform: Array2<f32>,
    pub clip_id: String,
    pub dataset: String,
    pub start_time: f64,
}

impl RawClip {
    pub fn new(
        frames: Array4<f32>,
        waveform: Array2<f32>,
        clip_id: impl Into<String>,
        dataset: impl Into<String>,
        start_time: f64,
    ) -> Result<Self> {
        if frames.shape()[0] == 0 {
            return Err(CoreError::EmptyClip);
        }
        if waveform.shape()[0] != 2 {
            return Err(CoreError::ChannelCount(waveform.shape()[0]));
        }
        Ok(Self {
            frames,
            waveform,
            clip_id: clip_id.into(),
            dataset: dataset.into(),
            start_time,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn num_samples(&self) -> usize {
        self.waveform.shape()[1]
    }
}
