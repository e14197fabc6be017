//! Assembly of tokenized clips into rectangular batch tensors.

use candle_core::{DType, Device, Tensor};

use crate::error::{CoreError, Result};
use crate::masking::{apply_mask, MaskSpec};
use crate::tokenizer::{AudioTokenGrid, VideoTokenGrid};

/// One forward pass worth of inputs. All clips in a batch share the video
/// grid shape and the mask mode, so survivor counts match.
pub struct BatchInput {
    /// `[B, P, D_v]`
    pub video: Tensor,
    /// `[B, U, D_a]` unmasked audio tokens in raster order.
    pub audio_unmasked: Tensor,
    /// `[B, S, D_a]` ground-truth masked patches in masked-index order.
    pub targets: Tensor,
    /// Per-clip coordinates of the surviving audio tokens.
    pub unmasked_coords: Vec<Vec<(usize, usize, usize)>>,
    /// Per-clip coordinates of the masked tokens.
    pub masked_coords: Vec<Vec<(usize, usize, usize)>>,
    pub specs: Vec<MaskSpec>,
    pub video_rows: usize,
    pub video_cols: usize,
    /// Audio patch grid within one channel (time patches, mel patches).
    pub audio_grid: (usize, usize),
}

impl BatchInput {
    pub fn new(
        items: &[(&VideoTokenGrid, &AudioTokenGrid, MaskSpec)],
        device: &Device,
        dtype: DType,
    ) -> Result<Self> {
        let (v0, a0, s0) = items.first().ok_or(CoreError::EmptyClip)?;
        let b = items.len();
        let p = v0.num_tokens();
        let dv = v0.token_dim();
        let da = a0.tokens.shape()[1];
        let u = a0.total_tokens() - s0.s;
        let s = s0.s;

        let mut video = Vec::with_capacity(b * p * dv);
        let mut audio = Vec::with_capacity(b * u * da);
        let mut targets = Vec::with_capacity(b * s * da);
        let mut unmasked_coords = Vec::with_capacity(b);
        let mut masked_coords = Vec::with_capacity(b);
        let mut specs = Vec::with_capacity(b);

        for (vg, ag, spec) in items {
            if vg.num_tokens() != p || vg.token_dim() != dv {
                return Err(CoreError::ShapeMismatch(
                    "inconsistent video grid within batch".into(),
                ));
            }
            if spec.s != s {
                return Err(CoreError::ShapeMismatch(
                    "inconsistent mask size within batch (mode purity violated)".into(),
                ));
            }
            let (survivors, coords, tgt) = apply_mask(ag, spec)?;
            video.extend(vg.tokens.iter().map(|&x| x as f64));
            audio.extend(survivors.iter().map(|&x| x as f64));
            targets.extend(tgt.iter().map(|&x| x as f64));
            unmasked_coords.push(coords);
            masked_coords.push(spec.masked_indices.iter().map(|&i| ag.coords[i]).collect());
            specs.push(spec.clone());
        }

        let to_tensor = |data: Vec<f64>, shape: (usize, usize, usize)| -> Result<Tensor> {
            Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
        };
        Ok(Self {
            video: to_tensor(video, (b, p, dv))?,
            audio_unmasked: to_tensor(audio, (b, u, da))?,
            targets: to_tensor(targets, (b, s, da))?,
            unmasked_coords,
            masked_coords,
            specs,
            video_rows: v0.rows,
            video_cols: v0.cols,
            audio_grid: a0.grid,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.specs.len()
    }
}
