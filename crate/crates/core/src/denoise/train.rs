//! Denoiser training: ideal-ratio-mask regression over SNR-controlled
//! mixtures, with optional visual conditioning from raw frames or from the
//! pretrained audio-visual encoder.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::clip::RawClip;
use crate::error::{CoreError, Result};
use crate::masking::MaskSpec;
use crate::model::blocks::linear;
use crate::model::{BatchInput, ModelConfig, ParamStore, SpatialMae};
use crate::optim::{AdamW, AdamWConfig};
use crate::pretrain::PreparedClip;
use crate::tokenizer::NormalizationStats;

use super::mix::{mix_at_snr, Mixture};
use super::stft::{istft, stft, ComplexSpectrogram};
use super::unet::{frames_to_map, init_unet_params, unet_forward, FusionInput, UNetConfig};

/// Source of the visual conditioning maps fed to the U-Net bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisionMode {
    /// Audio-only: both fusion maps are zeros.
    None,
    /// A single patch-conv embedding of the time-averaged frame.
    RawFrames,
    /// Features from the pretrained audio-visual encoder.
    Pretrained,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiseTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// SNRs (dB) sampled uniformly when building mixtures.
    pub snr_levels: Vec<f64>,
    pub vision: VisionMode,
    pub unet: UNetConfig,
    /// Learning-rate multiplier for the pretrained backbone.
    pub backbone_lr_scale: f64,
    pub seed: u64,
    pub max_steps: Option<usize>,
}

impl Default for DenoiseTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 80,
            lr: 5e-4,
            snr_levels: vec![0.0, 2.5, 5.0],
            vision: VisionMode::None,
            unet: UNetConfig::default(),
            backbone_lr_scale: 0.1,
            seed: 0,
            max_steps: None,
        }
    }
}

impl DenoiseTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CoreError::InvalidConfig(format!("bad learning rate {}", self.lr)));
        }
        if self.snr_levels.is_empty() {
            return Err(CoreError::InvalidConfig("empty SNR level list".into()));
        }
        Ok(())
    }
}

struct Backbone {
    mae: SpatialMae,
    config: ModelConfig,
    stats: NormalizationStats,
}

/// A trained (or freshly initialized) mask-regression denoiser.
pub struct DenoiseModel {
    pub store: ParamStore,
    pub unet: UNetConfig,
    pub vision: VisionMode,
    backbone: Option<Backbone>,
}

impl DenoiseModel {
    pub fn new(
        unet: UNetConfig,
        vision: VisionMode,
        checkpoint: Option<&Checkpoint>,
    ) -> Result<Self> {
        let device = Device::Cpu;
        let (mut store, backbone) = match (vision, checkpoint) {
            (VisionMode::Pretrained, Some(ckpt)) => {
                let store = ckpt.build_store(&device, DType::F32)?;
                let backbone = Backbone {
                    mae: SpatialMae::new(ckpt.config.clone())?,
                    config: ckpt.config.clone(),
                    stats: ckpt.stats.clone(),
                };
                (store, Some(backbone))
            }
            (VisionMode::Pretrained, None) => {
                return Err(CoreError::InvalidConfig(
                    "pretrained vision mode requires a checkpoint".into(),
                ));
            }
            _ => (ParamStore::new(device, DType::F32), None),
        };
        let enc_dim = backbone.as_ref().map_or(8, |b| b.config.enc_dim);
        init_unet_params(&mut store, &unet, enc_dim)?;
        Ok(Self {
            store,
            unet,
            vision,
            backbone,
        })
    }

    /// Compute the (video, audio) fusion maps for a clip, per the vision mode.
    fn fusion_maps(&self, clip: Option<&RawClip>) -> Result<Option<(Tensor, Option<Tensor>)>> {
        match self.vision {
            VisionMode::None => Ok(None),
            VisionMode::RawFrames => {
                let clip = clip.ok_or_else(|| {
                    CoreError::InvalidConfig("vision mode needs a video clip".into())
                })?;
                let (t, h, w, _) = {
                    let s = clip.frames.shape();
                    (s[0], s[1], s[2], s[3])
                };
                // time-average, then lay out channels-first
                let mut data = vec![0.0f32; 3 * h * w];
                for frame in 0..t {
                    for y in 0..h {
                        for x in 0..w {
                            for c in 0..3 {
                                data[c * h * w + y * w + x] += clip.frames[(frame, y, x, c)];
                            }
                        }
                    }
                }
                let scale = 1.0 / t as f32;
                data.iter_mut().for_each(|v| *v *= scale);
                let avg = Tensor::from_vec(data, (1, 3, h, w), &self.store.device)?
                    .to_dtype(self.store.dtype)?;
                let video = frames_to_map(&self.store, &avg)?;
                Ok(Some((video, None)))
            }
            VisionMode::Pretrained => {
                let clip = clip.ok_or_else(|| {
                    CoreError::InvalidConfig("vision mode needs a video clip".into())
                })?;
                let backbone = self.backbone.as_ref().ok_or_else(|| {
                    CoreError::InvalidConfig("pretrained vision mode without a backbone".into())
                })?;
                let prepared = PreparedClip::new(clip, &backbone.stats)?;
                let (video, audio) = prepared.grids(false)?;
                let spec = MaskSpec::empty(audio.total_tokens());
                let batch = BatchInput::new(
                    &[(&video, &audio, spec)],
                    &self.store.device,
                    self.store.dtype,
                )?;
                let enc = backbone.mae.encode(&self.store, &batch)?;
                let proj_dim = self.unet.fusion_proj;

                let v = linear(&self.store, "unet.fuse.proj", &enc.f_v()?)?;
                let vmap = v
                    .reshape((1, enc.video_rows, enc.video_cols, proj_dim))?
                    .permute((0, 3, 1, 2))?;

                let a = linear(&self.store, "unet.fuse.proj", &enc.f_a()?)?;
                // reorder rows into (channel, mel, time), then average channels
                let coords = &enc.unmasked_coords[0];
                let (tp, mp) = enc.audio_grid;
                let mut perm = vec![0u32; coords.len()];
                for (row, &(ch, t, m)) in coords.iter().enumerate() {
                    perm[ch * mp * tp + m * tp + t] = row as u32;
                }
                let idx = Tensor::from_vec(perm, (coords.len(),), &self.store.device)?;
                let amap = a
                    .index_select(&idx, 1)?
                    .reshape((1, 2, mp, tp, proj_dim))?
                    .mean(1)?
                    .permute((0, 3, 1, 2))?;
                Ok(Some((vmap, Some(amap))))
            }
        }
    }

    /// Predicted ratio mask `[1, 2, F, T]` for a mixture waveform.
    pub fn predict_mask(&self, mixed: &Array2<f32>, clip: Option<&RawClip>) -> Result<Tensor> {
        let spec = stft(mixed)?;
        self.predict_mask_for_spec(&spec, clip)
    }

    fn predict_mask_for_spec(
        &self,
        spec: &ComplexSpectrogram,
        clip: Option<&RawClip>,
    ) -> Result<Tensor> {
        let x = log_mag_tensor(spec, &self.store.device, self.store.dtype)?;
        let maps = self.fusion_maps(clip)?;
        let fusion = match &maps {
            Some((video, audio)) => FusionInput::Maps {
                video,
                audio: audio.as_ref(),
            },
            None => FusionInput::None,
        };
        unet_forward(&self.store, &self.unet, &x, &fusion)
    }

    /// End-to-end denoising: mask the mixture spectrogram, keep its phase,
    /// and invert back to a waveform of the original length.
    pub fn denoise(&self, mixed: &Array2<f32>, clip: Option<&RawClip>) -> Result<Array2<f32>> {
        let spec = stft(mixed)?;
        let mask = self.predict_mask_for_spec(&spec, clip)?;
        let mask = mask_to_array(&mask)?;
        let masked = apply_mask(&spec, &mask)?;
        istft(&masked, mixed.shape()[1])
    }
}

#[derive(Serialize, Deserialize)]
struct SavedDenoiser {
    unet: UNetConfig,
    vision: VisionMode,
    backbone: Option<(ModelConfig, NormalizationStats)>,
}

impl DenoiseModel {
    /// Persist config and all parameters (backbone included) to a directory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let saved = SavedDenoiser {
            unet: self.unet.clone(),
            vision: self.vision,
            backbone: self
                .backbone
                .as_ref()
                .map(|b| (b.config.clone(), b.stats.clone())),
        };
        std::fs::write(dir.join("denoiser.json"), serde_json::to_string_pretty(&saved)?)?;
        let params: std::collections::HashMap<String, Tensor> = self
            .store
            .iter()
            .map(|(name, var)| (name.clone(), var.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&params, dir.join("params.safetensors"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let saved: SavedDenoiser =
            serde_json::from_str(&std::fs::read_to_string(dir.join("denoiser.json"))?)?;
        let device = Device::Cpu;
        let params = candle_core::safetensors::load(dir.join("params.safetensors"), &device)?;
        let ckpt_holder;
        let checkpoint = match &saved.backbone {
            Some((config, stats)) => {
                // a throwaway init; every parameter is overwritten below
                let store = crate::model::init_params(config, &device, DType::F32)?;
                ckpt_holder = Checkpoint::from_store(config, &store, stats);
                Some(&ckpt_holder)
            }
            None => None,
        };
        let model = Self::new(saved.unet, saved.vision, checkpoint)?;
        let names = model.store.names();
        if names.len() != params.len() {
            return Err(CoreError::Checkpoint(format!(
                "expected {} parameters, file has {}",
                names.len(),
                params.len()
            )));
        }
        for name in &names {
            let value = params
                .get(name)
                .ok_or_else(|| CoreError::Checkpoint(format!("missing parameter {name}")))?;
            model.store.set(name, value)?;
        }
        Ok(model)
    }
}

/// Log-magnitude input features `[1, 2, F, T]`.
fn log_mag_tensor(spec: &ComplexSpectrogram, device: &Device, dtype: DType) -> Result<Tensor> {
    let shape = spec.data.shape().to_vec();
    let data: Vec<f32> = spec.data.iter().map(|c| (c.norm() + 1e-10).ln()).collect();
    Ok(Tensor::from_vec(data, (1, shape[0], shape[1], shape[2]), device)?.to_dtype(dtype)?)
}

/// Convert a `[1, 2, F, T]` mask tensor back to an array.
pub fn mask_to_array(mask: &Tensor) -> Result<Array3<f32>> {
    let (_, c, f, t) = mask.dims4()?;
    let data: Vec<f32> = mask.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    Array3::from_shape_vec((c, f, t), data)
        .map_err(|e| CoreError::ShapeMismatch(e.to_string()))
}

/// Multiply a complex spectrogram by a real mask, bin by bin.
pub fn apply_mask(spec: &ComplexSpectrogram, mask: &Array3<f32>) -> Result<ComplexSpectrogram> {
    if spec.data.shape() != mask.shape() {
        return Err(CoreError::ShapeMismatch(format!(
            "spectrogram {:?} vs mask {:?}",
            spec.data.shape(),
            mask.shape()
        )));
    }
    let mut data = spec.data.clone();
    data.zip_mut_with(mask, |c, &m| *c *= m);
    Ok(ComplexSpectrogram { data })
}

/// Ideal ratio mask of a mixture decomposition: `|S| / (|S| + alpha |N|)`.
pub fn ideal_ratio_mask(mixture: &Mixture) -> Result<Array3<f32>> {
    let s = stft(&mixture.target)?.magnitude();
    let n = stft(&mixture.noise)?.magnitude();
    let alpha = mixture.alpha as f32;
    let mut irm = s;
    irm.zip_mut_with(&n, |sv, &nv| {
        *sv = (*sv / (*sv + alpha * nv + 1e-10)).clamp(0.0, 1.0);
    });
    Ok(irm)
}

fn irm_tensor(irm: &Array3<f32>, device: &Device, dtype: DType) -> Result<Tensor> {
    let shape = irm.shape().to_vec();
    let data: Vec<f32> = irm.iter().copied().collect();
    Ok(Tensor::from_vec(data, (1, shape[0], shape[1], shape[2]), device)?.to_dtype(dtype)?)
}

#[derive(Debug, Clone)]
pub struct DenoiseReport {
    /// Mask-space MSE per optimizer step.
    pub losses: Vec<f64>,
}

impl DenoiseReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((epoch as u64).wrapping_mul(0x9e3779b97f4a7c15)))
}

/// Train a ratio-mask denoiser on mixtures of `targets` with `noises`.
///
/// Noise pairings and SNR levels are re-drawn every epoch. In pretrained
/// vision mode the backbone parameters train at `lr * backbone_lr_scale`.
pub fn train_denoiser(
    targets: &[RawClip],
    noises: &[RawClip],
    checkpoint: Option<&Checkpoint>,
    config: &DenoiseTrainConfig,
) -> Result<(DenoiseModel, DenoiseReport)> {
    config.validate()?;
    if targets.is_empty() || noises.is_empty() {
        return Err(CoreError::InvalidConfig(
            "need at least one target and one noise clip".into(),
        ));
    }
    let model = DenoiseModel::new(config.unet.clone(), config.vision, checkpoint)?;
    let groups = model
        .store
        .iter()
        .map(|(name, var)| {
            let scale = if name.starts_with("unet.") {
                1.0
            } else {
                config.backbone_lr_scale
            };
            (name.clone(), var.clone(), scale, false)
        })
        .collect();
    let mut opt = AdamW::new(
        groups,
        AdamWConfig {
            lr: config.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;

    let mut losses = Vec::new();
    let mut step = 0usize;
    'epochs: for epoch in 0..config.epochs {
        let mut rng = epoch_rng(config.seed, epoch);
        let mut order: Vec<usize> = (0..targets.len()).collect();
        order.shuffle(&mut rng);
        let pairings: Vec<(usize, usize, f64)> = order
            .iter()
            .map(|&t| {
                let n = rng.gen_range(0..noises.len());
                let snr = config.snr_levels[rng.gen_range(0..config.snr_levels.len())];
                (t, n, snr)
            })
            .collect();

        for batch in pairings.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let mut batch_loss: Option<Tensor> = None;
            let mut clip_ids = Vec::new();
            for &(ti, ni, snr) in batch {
                let target = &targets[ti];
                clip_ids.push(target.clip_id.clone());
                let mixture = mix_at_snr(&target.waveform, &noises[ni].waveform, snr)?;
                let spec = stft(&mixture.mixed)?;
                let clip_for_vision;
                let clip_ref = match config.vision {
                    VisionMode::None => None,
                    _ => {
                        clip_for_vision = RawClip::new(
                            target.frames.clone(),
                            mixture.mixed.clone(),
                            target.clip_id.clone(),
                            target.dataset.clone(),
                            target.start_time,
                        )?;
                        Some(&clip_for_vision)
                    }
                };
                let mask = model.predict_mask_for_spec(&spec, clip_ref)?;
                let irm = irm_tensor(
                    &ideal_ratio_mask(&mixture)?,
                    &model.store.device,
                    model.store.dtype,
                )?;
                let mse = (mask - irm)?.sqr()?.mean_all()?;
                batch_loss = Some(match batch_loss {
                    Some(acc) => (acc + mse)?,
                    None => mse,
                });
            }
            let Some(total) = batch_loss else { continue };
            let loss = (total / batch.len() as f64)?;
            let loss_val = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !loss_val.is_finite() {
                return Err(CoreError::NonFiniteLoss { step, clip_ids });
            }
            let grads = loss.backward()?;
            opt.step(&grads)?;
            losses.push(loss_val);
            step += 1;
        }
    }
    Ok((model, DenoiseReport { losses }))
}
