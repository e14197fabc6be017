//! Audio patch tokenization of binaural Mel spectrograms.
//!
//! Each channel is split into non-overlapping 2x16 (time x mel) patches in
//! time-major raster order; the left channel's tokens come first.

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::tokenizer::mel::MelSpectrogramPair;

pub const PATCH_TIME: usize = 2;
pub const PATCH_MEL: usize = 16;
pub const AUDIO_TOKEN_DIM: usize = PATCH_TIME * PATCH_MEL;

/// Patch tokens of both channels with their grid coordinates.
#[derive(Debug, Clone)]
pub struct AudioTokenGrid {
    /// `Q x D_a` with `Q = 2 * Q_c`; rows `0..Q_c` are the left channel.
    pub tokens: Array2<f32>,
    /// Per-token `(channel, time_idx, mel_idx)`.
    pub coords: Vec<(usize, usize, usize)>,
    /// Tokens per channel.
    pub per_channel: usize,
    /// Patch grid dims within one channel: (time patches, mel patches).
    pub grid: (usize, usize),
}

impl AudioTokenGrid {
    pub fn total_tokens(&self) -> usize {
        self.tokens.shape()[0]
    }
}

/// Split a Mel pair into 2x16 patch tokens.
pub fn tokenize_audio(pair: &MelSpectrogramPair) -> Result<AudioTokenGrid> {
    let (ft, fm) = (pair.num_windows(), pair.num_mel_bins());
    if ft % PATCH_TIME != 0 || fm % PATCH_MEL != 0 {
        return Err(CoreError::IndivisibleDims {
            dims: (ft, fm),
            patch: (PATCH_TIME, PATCH_MEL),
            hint: (ft.div_ceil(PATCH_TIME) * PATCH_TIME, fm.div_ceil(PATCH_MEL) * PATCH_MEL),
        });
    }
    let (tp, mp) = (ft / PATCH_TIME, fm / PATCH_MEL);
    let per_channel = tp * mp;
    let mut tokens = Array2::zeros((2 * per_channel, AUDIO_TOKEN_DIM));
    let mut coords = Vec::with_capacity(2 * per_channel);
    for ch in 0..2 {
        let spec = pair.channel(ch);
        for ti in 0..tp {
            for mi in 0..mp {
                let idx = ch * per_channel + ti * mp + mi;
                coords.push((ch, ti, mi));
                for dt in 0..PATCH_TIME {
                    for dm in 0..PATCH_MEL {
                        tokens[(idx, dt * PATCH_MEL + dm)] =
                            spec[(ti * PATCH_TIME + dt, mi * PATCH_MEL + dm)];
                    }
                }
            }
        }
    }
    Ok(AudioTokenGrid {
        tokens,
        coords,
        per_channel,
        grid: (tp, mp),
    })
}

/// Reassemble a Mel pair from patch tokens (inverse of [`tokenize_audio`]).
pub fn detokenize_audio(grid: &AudioTokenGrid) -> MelSpectrogramPair {
    let (tp, mp) = grid.grid;
    let (ft, fm) = (tp * PATCH_TIME, mp * PATCH_MEL);
    let mut channels = [Array2::zeros((ft, fm)), Array2::zeros((ft, fm))];
    for (idx, &(ch, ti, mi)) in grid.coords.iter().enumerate() {
        for dt in 0..PATCH_TIME {
            for dm in 0..PATCH_MEL {
                channels[ch][(ti * PATCH_TIME + dt, mi * PATCH_MEL + dm)] =
                    grid.tokens[(idx, dt * PATCH_MEL + dm)];
            }
        }
    }
    let [left, right] = channels;
    MelSpectrogramPair { left, right }
}
