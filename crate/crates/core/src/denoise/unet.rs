//! Ratio-mask U-Net over log-magnitude spectrograms, with an optional fusion
//! path injecting projected video/audio feature maps at the bottleneck.
//!
//! The backend only exposes symmetric strides and paddings, so asymmetric
//! convolutions are built from explicit zero-padding, a stride-1 convolution
//! and index subsampling; asymmetric transpose-conv paddings become a
//! padding-0 transpose convolution followed by cropping.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::init::{Initializer, ParamStore};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub enc_channels: [usize; 5],
    pub dec_channels: [usize; 5],
    /// Width of the pre-fusion linear projection of encoder features.
    pub fusion_proj: usize,
    pub fusion_video_ch: usize,
    pub fusion_audio_ch: usize,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            enc_channels: [64, 128, 256, 512, 512],
            dec_channels: [1152, 1024, 512, 256, 128],
            fusion_proj: 128,
            fusion_video_ch: 784,
            fusion_audio_ch: 256,
            leaky_slope: 0.2,
            seed: 0,
        }
    }
}

impl UNetConfig {
    /// Scaled-down profile for CPU tests.
    pub fn tiny(seed: u64) -> Self {
        Self {
            enc_channels: [4, 8, 16, 32, 32],
            dec_channels: [24, 16, 12, 8, 8],
            fusion_proj: 16,
            fusion_video_ch: 32,
            fusion_audio_ch: 16,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_channels.iter().chain(&self.dec_channels).any(|&c| c == 0) {
            return Err(CoreError::InvalidConfig("zero channel count".into()));
        }
        if self.fusion_proj == 0 || self.fusion_video_ch == 0 || self.fusion_audio_ch == 0 {
            return Err(CoreError::InvalidConfig("zero fusion width".into()));
        }
        Ok(())
    }

    /// Input channel count of decoder layer `i`, accounting for the fusion
    /// concat at the bottleneck and the mirror skip connections.
    pub fn dec_in(&self, i: usize) -> usize {
        if i == 0 {
            self.enc_channels[4] + self.fusion_video_ch + self.fusion_audio_ch
        } else {
            self.dec_channels[i - 1] + self.enc_channels[4 - i]
        }
    }
}

/// What feeds the bottleneck fusion path.
pub enum FusionInput<'a> {
    /// "w/o vision" ablation: both fusion maps are zeros.
    None,
    /// Projected token maps, each `[B, fusion_proj, h, w]`.
    Maps {
        video: &'a Tensor,
        audio: Option<&'a Tensor>,
    },
}

pub fn init_unet_params(store: &mut ParamStore, config: &UNetConfig, enc_dim: usize) -> Result<()> {
    config.validate()?;
    let mut init = Initializer::new(config.seed, store.device.clone(), store.dtype);
    fn conv(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        shape: &[usize],
        bias_dim: usize,
    ) -> Result<()> {
        store.insert(&format!("{prefix}.weight"), init.xavier_uniform(shape)?)?;
        store.insert(&format!("{prefix}.bias"), init.zeros(&[bias_dim])?)?;
        Ok(())
    }
    fn bn(store: &mut ParamStore, init: &Initializer, prefix: &str, ch: usize) -> Result<()> {
        store.insert(&format!("{prefix}.weight"), init.ones(&[ch])?)?;
        store.insert(&format!("{prefix}.bias"), init.zeros(&[ch])?)?;
        Ok(())
    }

    let mut in_ch = 2;
    for (i, &out_ch) in config.enc_channels.iter().enumerate() {
        conv(store, &mut init, &format!("unet.enc{i}.conv"), &[out_ch, in_ch, 4, 4], out_ch)?;
        bn(store, &init, &format!("unet.enc{i}.bn"), out_ch)?;
        in_ch = out_ch;
    }
    for (i, &out_ch) in config.dec_channels.iter().enumerate() {
        // transpose-conv weights are laid out (in, out, kh, kw)
        conv(
            store,
            &mut init,
            &format!("unet.dec{i}.conv"),
            &[config.dec_in(i), out_ch, 4, 4],
            out_ch,
        )?;
        bn(store, &init, &format!("unet.dec{i}.bn"), out_ch)?;
    }
    conv(store, &mut init, "unet.bridge", &[2, config.dec_channels[4], 1, 1], 2)?;
    conv(store, &mut init, "unet.final", &[2, 2, 2, 1], 2)?;
    conv(
        store,
        &mut init,
        "unet.fuse.video",
        &[config.fusion_video_ch, config.fusion_proj, 3, 4],
        config.fusion_video_ch,
    )?;
    conv(
        store,
        &mut init,
        "unet.fuse.audio",
        &[config.fusion_audio_ch, config.fusion_proj, 1, 7],
        config.fusion_audio_ch,
    )?;
    conv(store, &mut init, "unet.fuse.proj", &[config.fusion_proj, enc_dim], config.fusion_proj)?;
    conv(
        store,
        &mut init,
        "unet.frames",
        &[config.fusion_proj, 3, 16, 16],
        config.fusion_proj,
    )?;
    Ok(())
}

fn add_channel_bias(store: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let b = store.get(&format!("{prefix}.bias"))?;
    let b = b.reshape((1, b.dims1()?, 1, 1))?;
    Ok(x.broadcast_add(&b)?)
}

fn conv_sym(store: &ParamStore, prefix: &str, x: &Tensor, pad: usize, stride: usize) -> Result<Tensor> {
    let w = store.get(&format!("{prefix}.weight"))?;
    let y = x.conv2d(&w, pad, stride, 1, 1)?;
    add_channel_bias(store, prefix, &y)
}

fn subsample(x: &Tensor, dim: usize, stride: usize) -> Result<Tensor> {
    if stride == 1 {
        return Ok(x.clone());
    }
    let len = x.dims()[dim];
    let idx: Vec<u32> = (0..len as u32).step_by(stride).collect();
    let idx = Tensor::from_vec(idx, (len.div_ceil(stride),), x.device())?;
    Ok(x.index_select(&idx, dim)?)
}

/// Convolution with per-axis padding and stride, built from symmetric
/// primitives: zero-pad, stride-1 convolve, subsample.
fn conv_asym(
    store: &ParamStore,
    prefix: &str,
    x: &Tensor,
    pad: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor> {
    let w = store.get(&format!("{prefix}.weight"))?;
    let mut x = x.clone();
    if pad.0 > 0 {
        x = x.pad_with_zeros(2, pad.0, pad.0)?;
    }
    if pad.1 > 0 {
        x = x.pad_with_zeros(3, pad.1, pad.1)?;
    }
    let y = x.conv2d(&w, 0, 1, 1, 1)?;
    let y = subsample(&y, 2, stride.0)?;
    let y = subsample(&y, 3, stride.1)?;
    add_channel_bias(store, prefix, &y)
}

/// Stride-2 kernel-4 transpose convolution with per-axis padding, built as a
/// padding-0 transpose convolution followed by cropping.
fn convt(store: &ParamStore, prefix: &str, x: &Tensor, pad: (usize, usize)) -> Result<Tensor> {
    let w = store.get(&format!("{prefix}.weight"))?;
    let y = x.conv_transpose2d(&w, 0, 0, 2, 1)?;
    let (_, _, h, w_) = y.dims4()?;
    let y = y.narrow(2, pad.0, h - 2 * pad.0)?;
    let y = y.narrow(3, pad.1, w_ - 2 * pad.1)?;
    add_channel_bias(store, prefix, &y)
}

/// Batch normalization using the batch statistics of the current input.
fn batch_norm(store: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim((0, 2, 3))?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
    let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
    let c = x.dims4()?.1;
    let g = store.get(&format!("{prefix}.weight"))?.reshape((1, c, 1, 1))?;
    let b = store.get(&format!("{prefix}.bias"))?.reshape((1, c, 1, 1))?;
    Ok(normed.broadcast_mul(&g)?.broadcast_add(&b)?)
}

fn leaky(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Interpolation-matrix weights for 1-D bilinear resampling.
fn resize_matrix(from: usize, to: usize) -> Vec<f32> {
    let mut m = vec![0.0f32; to * from];
    for i in 0..to {
        let src = ((i as f64 + 0.5) * from as f64 / to as f64 - 0.5)
            .clamp(0.0, (from - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(from - 1);
        let frac = (src - lo as f64) as f32;
        m[i * from + lo] += 1.0 - frac;
        m[i * from + hi] += frac;
    }
    m
}

/// Differentiable bilinear resize of a `[B, C, H, W]` tensor via matmuls.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h == out_h && w == out_w {
        return Ok(x.clone());
    }
    let dev = x.device();
    let a_h = Tensor::from_vec(resize_matrix(h, out_h), (out_h, h), dev)?.to_dtype(x.dtype())?;
    let a_w = Tensor::from_vec(resize_matrix(w, out_w), (out_w, w), dev)?.to_dtype(x.dtype())?;
    let flat = x.reshape((b * c, h, w))?;
    let y = a_h.broadcast_matmul(&flat)?; // [B*C, out_h, w]
    let y = y.broadcast_matmul(&a_w.t()?)?; // [B*C, out_h, out_w]
    Ok(y.reshape((b, c, out_h, out_w))?)
}

/// Pad spatial dims to even sizes so every stride-2 convolution is exact;
/// inexact convolutions produce truncated input gradients on this backend.
fn pad_to_even(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let mut x = x.clone();
    if h % 2 == 1 {
        x = x.pad_with_zeros(2, 0, 1)?;
    }
    if w % 2 == 1 {
        x = x.pad_with_zeros(3, 0, 1)?;
    }
    Ok(x)
}

/// Predict a ratio mask for a `[B, 2, F, T]` log-magnitude spectrogram.
/// Output has the same shape with values in (0, 1).
pub fn unet_forward(
    store: &ParamStore,
    config: &UNetConfig,
    log_mag: &Tensor,
    fusion: &FusionInput,
) -> Result<Tensor> {
    let (b, ch, f, t) = log_mag.dims4()?;
    if ch != 2 {
        return Err(CoreError::ChannelCount(ch));
    }
    if f < 32 || t < 32 {
        return Err(CoreError::ClipTooShort {
            got: f.min(t),
            need: 32,
        });
    }

    let mut skips = Vec::with_capacity(5);
    let mut x = log_mag.clone();
    for i in 0..5 {
        x = pad_to_even(&x)?;
        x = conv_sym(store, &format!("unet.enc{i}.conv"), &x, 1, 2)?;
        x = batch_norm(store, &format!("unet.enc{i}.bn"), &x)?;
        x = leaky(&x, config.leaky_slope)?;
        skips.push(x.clone());
    }
    let (hb, wb) = {
        let d = x.dims4()?;
        (d.2, d.3)
    };

    let zeros = |chans: usize| -> Result<Tensor> {
        Ok(Tensor::zeros((b, chans, hb, wb), x.dtype(), x.device())?)
    };
    let (fv, fa) = match fusion {
        FusionInput::None => (zeros(config.fusion_video_ch)?, zeros(config.fusion_audio_ch)?),
        FusionInput::Maps { video, audio } => {
            let v = conv_asym(store, "unet.fuse.video", video, (1, 2), (2, 3))?;
            let v = bilinear_resize(&v, hb, wb)?;
            let a = match audio {
                Some(a) => {
                    let a = conv_asym(store, "unet.fuse.audio", a, (0, 0), (1, 6))?;
                    bilinear_resize(&a, hb, wb)?
                }
                None => zeros(config.fusion_audio_ch)?,
            };
            (v, a)
        }
    };
    let mut y = Tensor::cat(&[&x, &fv, &fa], 1)?;

    for i in 0..5 {
        let pad = if i == 4 { (2, 1) } else { (1, 1) };
        y = convt(store, &format!("unet.dec{i}.conv"), &y, pad)?;
        y = batch_norm(store, &format!("unet.dec{i}.bn"), &y)?;
        y = leaky(&y, config.leaky_slope)?;
        if i < 4 {
            let skip = &skips[3 - i];
            let d = skip.dims4()?;
            y = bilinear_resize(&y, d.2, d.3)?;
            y = Tensor::cat(&[&y, skip], 1)?;
        }
    }
    let y = conv_sym(store, "unet.bridge", &y, 0, 1)?;
    let y = leaky(&y, config.leaky_slope)?;
    // final (2, 1) kernel; stride 1, no padding
    let w = store.get("unet.final.weight")?;
    let y = y.conv2d(&w, 0, 1, 1, 1)?;
    let y = add_channel_bias(store, "unet.final", &y)?;
    let y = bilinear_resize(&y, f, t)?;
    Ok(candle_nn::ops::sigmoid(&y)?)
}

/// Raw-frame vision path: a patch conv turning an averaged `[B, 3, H, W]`
/// frame into a `[B, fusion_proj, H/16, W/16]` map.
pub fn frames_to_map(store: &ParamStore, frames: &Tensor) -> Result<Tensor> {
    let w = store.get("unet.frames.weight")?;
    let y = frames.conv2d(&w, 0, 16, 1, 1)?;
    add_channel_bias(store, "unet.frames", &y)
}
