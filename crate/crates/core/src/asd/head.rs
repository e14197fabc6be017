//! Minimal ASD classifier: a small crop encoder plus a two-layer head over
//! the concatenation of crop and fused audio-visual features.

use candle_core::{Tensor, D};

use crate::error::{CoreError, Result};
use crate::model::blocks::linear;
use crate::model::init::{Initializer, ParamStore};

use super::{FaceTrack, FusionConfig, CROP_SIZE};

const CONV1_CH: usize = 8;
const CONV2_CH: usize = 16;
// two stride-4 kernel-4 convs: 112 -> 28 -> 7
const CONV_OUT_EDGE: usize = CROP_SIZE / 16;
const CROP_FEAT: usize = CONV2_CH * CONV_OUT_EDGE * CONV_OUT_EDGE;

/// Add the ASD head parameters to an existing store.
pub fn init_head_params(store: &mut ParamStore, fusion: &FusionConfig, seed: u64) -> Result<()> {
    let d = fusion.out_dim;
    let mut init = Initializer::new(seed, store.device.clone(), store.dtype);
    store.insert("asd.conv1.weight", init.xavier_uniform(&[CONV1_CH, 3, 4, 4])?)?;
    store.insert("asd.conv1.bias", init.zeros(&[CONV1_CH])?)?;
    store.insert("asd.conv2.weight", init.xavier_uniform(&[CONV2_CH, CONV1_CH, 4, 4])?)?;
    store.insert("asd.conv2.bias", init.zeros(&[CONV2_CH])?)?;
    store.insert("asd.crop_proj.weight", init.xavier_uniform(&[d, CROP_FEAT])?)?;
    store.insert("asd.crop_proj.bias", init.zeros(&[d])?)?;
    store.insert("asd.bbox_proj.weight", init.xavier_uniform(&[d, 4])?)?;
    store.insert("asd.bbox_proj.bias", init.zeros(&[d])?)?;
    store.insert("asd.cls.fc1.weight", init.xavier_uniform(&[d, 2 * d])?)?;
    store.insert("asd.cls.fc1.bias", init.zeros(&[d])?)?;
    store.insert("asd.cls.fc2.weight", init.xavier_uniform(&[1, d])?)?;
    store.insert("asd.cls.fc2.bias", init.zeros(&[1])?)?;
    Ok(())
}

fn conv(store: &ParamStore, prefix: &str, x: &Tensor, stride: usize) -> Result<Tensor> {
    let w = store.get(&format!("{prefix}.weight"))?;
    let b = store.get(&format!("{prefix}.bias"))?;
    let y = x.conv2d(&w, 0, stride, 1, 1)?;
    let b = b.reshape((1, b.dims1()?, 1, 1))?;
    Ok(y.broadcast_add(&b)?)
}

/// Per-frame active-speaker scores in (0, 1).
///
/// `fused` is the `[T, out_dim]` fusion output for the clip the track belongs
/// to; the result is a `[T]` tensor of probabilities.
pub fn asd_forward(
    store: &ParamStore,
    fusion: &FusionConfig,
    track: &FaceTrack,
    fused: &Tensor,
) -> Result<Tensor> {
    let t = track.num_frames();
    let (ft, fd) = fused.dims2()?;
    if ft != t || fd != fusion.out_dim {
        return Err(CoreError::ShapeMismatch(format!(
            "track has {t} frames but fused features are {ft}x{fd} (want {t}x{})",
            fusion.out_dim
        )));
    }
    let device = &store.device;
    // crops to NCHW
    let crops: Vec<f32> = track
        .crops
        .view()
        .permuted_axes([0, 3, 1, 2])
        .iter()
        .copied()
        .collect();
    let x = Tensor::from_vec(crops, (t, 3, CROP_SIZE, CROP_SIZE), device)?
        .to_dtype(store.dtype)?;
    let h = conv(store, "asd.conv1", &x, 4)?.relu()?;
    let h = conv(store, "asd.conv2", &h, 4)?.relu()?;
    let h = h.reshape((t, CROP_FEAT))?;
    let crop_emb = linear(store, "asd.crop_proj", &h)?;

    let bbox_data: Vec<f32> = track.bboxes.iter().flatten().copied().collect();
    let bboxes = Tensor::from_vec(bbox_data, (t, 4), device)?.to_dtype(store.dtype)?;
    let bbox_emb = linear(store, "asd.bbox_proj", &bboxes)?;

    let visual = (crop_emb + bbox_emb)?;
    let joint = Tensor::cat(&[&visual, fused], D::Minus1)?;
    let h = linear(store, "asd.cls.fc1", &joint)?.relu()?;
    let logits = linear(store, "asd.cls.fc2", &h)?.squeeze(D::Minus1)?;
    Ok(candle_nn::ops::sigmoid(&logits)?)
}
