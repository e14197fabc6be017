//! Self-supervised pretraining: augmentation, batching, the optimizer loop
//! with warmup plus cosine decay, checkpoint retention, and inpainting
//! evaluation.

use std::collections::VecDeque;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use candle_core::{DType, Device};
use ndarray::{Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::clip::RawClip;
use crate::error::{CoreError, Result};
use crate::masking::{sample_batch_mode, sample_mask_with_mode, MaskMode, MaskingConfig};
use crate::model::init::is_decay_excluded;
use crate::model::{init_params, BatchInput, ModelConfig, ParamStore, SpatialMae};
use crate::optim::{AdamW, AdamWConfig};
use crate::schedule::lr_at_step;
use crate::tokenizer::{
    compute_mel_pair, tokenize_audio, tokenize_video, AudioTokenGrid, MelSpectrogramPair,
    NormalizationStats, VideoTokenGrid,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub masking: MaskingConfig,
    pub augment_flip_prob: f64,
    pub clip_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 104,
            peak_lr: 2e-4,
            warmup_epochs: 10,
            weight_decay: 1e-5,
            masking: MaskingConfig::default(),
            augment_flip_prob: 0.5,
            clip_grad_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs >= self.epochs {
            return Err(CoreError::InvalidConfig(format!(
                "warmup_epochs {} must be below epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(CoreError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.augment_flip_prob) {
            return Err(CoreError::InvalidConfig(
                "augment_flip_prob outside [0,1]".into(),
            ));
        }
        self.masking.validate()
    }
}

/// Mirror every frame horizontally and swap the waveform channels. The two
/// transforms are coupled so the physical left/right correspondence between
/// picture and sound is preserved.
pub fn flip_clip(clip: &RawClip) -> RawClip {
    let mut frames = clip.frames.clone();
    frames.invert_axis(Axis(2));
    let mut waveform = clip.waveform.clone();
    waveform.invert_axis(Axis(0));
    RawClip {
        frames,
        waveform,
        clip_id: clip.clip_id.clone(),
        dataset: clip.dataset.clone(),
        start_time: clip.start_time,
    }
}

/// Coupled flip with probability `prob`, identity otherwise.
pub fn augment(clip: &RawClip, prob: f64, rng: &mut ChaCha8Rng) -> RawClip {
    if rng.gen::<f64>() < prob {
        flip_clip(clip)
    } else {
        clip.clone()
    }
}

/// A clip preprocessed once for the training loop: normalized frames plus the
/// normalized log-Mel pair. Flipped variants are derived on demand (frame
/// mirror, spectrogram channel swap) instead of being recomputed.
#[derive(Debug, Clone)]
pub struct PreparedClip {
    pub clip_id: String,
    frames: Array4<f32>,
    mel: MelSpectrogramPair,
}

impl PreparedClip {
    pub fn new(clip: &RawClip, stats: &NormalizationStats) -> Result<Self> {
        let mut frames = clip.frames.clone();
        for (c, lane) in frames.axis_iter_mut(Axis(3)).enumerate() {
            let (mean, std) = (stats.video_mean[c], stats.video_std[c]);
            let mut lane = lane;
            lane.mapv_inplace(|x| (x - mean) / std);
        }
        let mel = compute_mel_pair(&clip.waveform, stats)?;
        Ok(Self {
            clip_id: clip.clip_id.clone(),
            frames,
            mel,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn grids(&self, flip: bool) -> Result<(VideoTokenGrid, AudioTokenGrid)> {
        let video = if flip {
            let mut frames = self.frames.clone();
            frames.invert_axis(Axis(2));
            tokenize_video(&frames)?
        } else {
            tokenize_video(&self.frames)?
        };
        let audio = if flip {
            tokenize_audio(&self.mel.swapped())?
        } else {
            tokenize_audio(&self.mel)?
        };
        Ok((video, audio))
    }
}

pub fn prepare_clips(clips: &[RawClip], stats: &NormalizationStats) -> Result<Vec<PreparedClip>> {
    clips.iter().map(|c| PreparedClip::new(c, stats)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub mask_mode: String,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Write checkpoints and `metrics.jsonl` here when set.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many optimizer steps (smoke profile).
    pub max_steps: Option<usize>,
    /// Cooperative interrupt: when set, a final checkpoint is written and the
    /// loop returns early.
    pub stop_flag: Option<Arc<AtomicBool>>,
}

#[derive(Debug)]
pub struct TrainReport {
    pub metrics: Vec<MetricsRecord>,
    pub checkpoint: Checkpoint,
    pub best_val_loss: Option<f64>,
    pub interrupted: bool,
}

const KEEP_LAST: usize = 3;

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((epoch as u64).wrapping_mul(0x9e3779b97f4a7c15)))
}

fn mode_name(mode: MaskMode) -> &'static str {
    match mode {
        MaskMode::Channel => "channel",
        MaskMode::Token => "token",
    }
}

/// Run the pretraining loop over an in-memory dataset.
pub fn train(
    train_clips: &[RawClip],
    val_clips: &[RawClip],
    stats: &NormalizationStats,
    model_config: &ModelConfig,
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<TrainReport> {
    config.validate()?;
    model_config.validate()?;
    if train_clips.is_empty() {
        return Err(CoreError::EmptyCorpus);
    }
    let device = Device::Cpu;
    let dtype = DType::F32;
    let store = init_params(model_config, &device, dtype)?;
    let mae = SpatialMae::new(model_config.clone())?;
    let prepared = prepare_clips(train_clips, stats)?;
    let prepared_val = prepare_clips(val_clips, stats)?;

    let groups = store
        .iter()
        .map(|(name, var)| (name.clone(), var.clone(), 1.0, !is_decay_excluded(name)))
        .collect();
    let mut opt = AdamW::new(
        groups,
        AdamWConfig {
            lr: 0.0,
            weight_decay: config.weight_decay,
            clip_grad_norm: config.clip_grad_norm,
            ..Default::default()
        },
    )?;

    let mut metrics_file = match &options.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(std::fs::File::create(dir.join("metrics.jsonl"))?)
        }
        None => None,
    };

    let n = prepared.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let mut metrics = Vec::new();
    let mut global_step = 0usize;
    let mut best_val: Option<f64> = None;
    let mut saved: VecDeque<PathBuf> = VecDeque::new();
    let mut interrupted = false;

    'epochs: for epoch in 0..config.epochs {
        let mut rng = epoch_rng(config.seed, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        for chunk in order.chunks(config.batch_size) {
            if let Some(flag) = &options.stop_flag {
                if flag.load(Ordering::Relaxed) {
                    interrupted = true;
                    break 'epochs;
                }
            }
            if options.max_steps.is_some_and(|m| global_step >= m) {
                break 'epochs;
            }

            let mode = sample_batch_mode(&config.masking, &mut rng);
            let mut grids = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let flip = rng.gen::<f64>() < config.augment_flip_prob;
                grids.push((idx, prepared[idx].grids(flip)?));
            }
            let mut items = Vec::with_capacity(chunk.len());
            for (_, (vg, ag)) in &grids {
                let spec = sample_mask_with_mode(
                    &config.masking,
                    mode,
                    ag.total_tokens(),
                    ag.per_channel,
                    &mut rng,
                );
                items.push((vg, ag, spec));
            }
            let batch = BatchInput::new(&items, &device, dtype)?;

            let lr = lr_at_step(
                config.peak_lr,
                config.warmup_epochs,
                config.epochs,
                steps_per_epoch,
                global_step,
            );
            let enc = mae.encode(&store, &batch)?;
            let pred = mae.decode(&store, &enc)?;
            let loss = mae.loss(&pred, &batch.targets)?;
            let loss_val = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !loss_val.is_finite() {
                return Err(CoreError::NonFiniteLoss {
                    step: global_step,
                    clip_ids: grids
                        .iter()
                        .map(|(idx, _)| prepared[*idx].clip_id.clone())
                        .collect(),
                });
            }
            let grads = loss.backward()?;
            opt.set_lr(lr);
            opt.step(&grads)?;

            let record = MetricsRecord {
                step: global_step,
                epoch,
                loss: loss_val,
                lr,
                mask_mode: mode_name(mode).to_string(),
            };
            if let Some(file) = &mut metrics_file {
                serde_json::to_writer(&mut *file, &record)?;
                file.write_all(b"\n")?;
            }
            metrics.push(record);
            global_step += 1;
        }

        if let Some(dir) = &options.out_dir {
            let checkpoint = snapshot(
                model_config,
                &store,
                stats,
                &opt,
                epoch + 1,
                global_step,
            );
            let path = dir.join(format!("epoch_{:04}.ckpt", epoch + 1));
            save_checkpoint(&path, &checkpoint)?;
            saved.push_back(path);
            while saved.len() > KEEP_LAST {
                let old = saved.pop_front().unwrap();
                let _ = std::fs::remove_file(old);
            }
            if !prepared_val.is_empty() {
                let val = mean_loss(
                    &mae,
                    &store,
                    &prepared_val,
                    MaskMode::Token,
                    &config.masking,
                    config.seed,
                    VideoCondition::True,
                )?;
                let val_mean = val.iter().sum::<f64>() / val.len() as f64;
                if best_val.is_none_or(|b| val_mean < b) {
                    best_val = Some(val_mean);
                    let best = snapshot(model_config, &store, stats, &opt, epoch + 1, global_step);
                    save_checkpoint(&dir.join("best.ckpt"), &best)?;
                }
            }
        }
    }

    let checkpoint = snapshot(
        model_config,
        &store,
        stats,
        &opt,
        metrics.last().map_or(0, |m| m.epoch + 1),
        global_step,
    );
    if let Some(dir) = &options.out_dir {
        save_checkpoint(&dir.join("final.ckpt"), &checkpoint)?;
    }
    Ok(TrainReport {
        metrics,
        checkpoint,
        best_val_loss: best_val,
        interrupted,
    })
}

fn snapshot(
    model_config: &ModelConfig,
    store: &ParamStore,
    stats: &NormalizationStats,
    opt: &AdamW,
    epoch: usize,
    step: usize,
) -> Checkpoint {
    let (opt_step, optim) = opt.state();
    let mut checkpoint = Checkpoint::from_store(model_config, store, stats);
    checkpoint.optim = optim;
    checkpoint.opt_step = opt_step;
    checkpoint.epoch = epoch;
    checkpoint.step = step;
    // epoch rngs are pure functions of (seed, epoch), so no rng state is
    // needed to resume deterministically
    checkpoint
}

/// What to feed the video branch during inpainting evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VideoCondition {
    True,
    Zeros,
    /// Video tokens borrowed from a different clip.
    Shuffled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InpaintingReport {
    /// Per-clip Eq. 1 losses under each video condition, index-aligned.
    pub true_video: Vec<f64>,
    pub zero_video: Vec<f64>,
    pub shuffled_video: Vec<f64>,
}

impl InpaintingReport {
    pub fn means(&self) -> (f64, f64, f64) {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        (
            mean(&self.true_video),
            mean(&self.zero_video),
            mean(&self.shuffled_video),
        )
    }
}

fn mean_loss(
    mae: &SpatialMae,
    store: &ParamStore,
    clips: &[PreparedClip],
    mask_mode: MaskMode,
    masking: &MaskingConfig,
    seed: u64,
    condition: VideoCondition,
) -> Result<Vec<f64>> {
    let device = Device::Cpu;
    let dtype = store.var(&store.names()[0])?.as_tensor().dtype();
    let mut losses = Vec::with_capacity(clips.len());
    for (i, clip) in clips.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e3779b9));
        let (video, audio) = clip.grids(false)?;
        let video = match condition {
            VideoCondition::True => video,
            VideoCondition::Zeros => {
                let mut zeroed = video;
                zeroed.tokens.fill(0.0);
                zeroed
            }
            VideoCondition::Shuffled => {
                let (other, _) = clips[(i + 1) % clips.len()].grids(false)?;
                if other.tokens.shape() != video.tokens.shape() {
                    return Err(CoreError::ShapeMismatch(
                        "shuffled-video evaluation needs uniform resolution".into(),
                    ));
                }
                other
            }
        };
        let spec = sample_mask_with_mode(
            masking,
            mask_mode,
            audio.total_tokens(),
            audio.per_channel,
            &mut rng,
        );
        let batch = BatchInput::new(&[(&video, &audio, spec)], &device, dtype)?;
        let enc = mae.encode(store, &batch)?;
        let pred = mae.decode(store, &enc)?;
        let loss = mae.loss(&pred, &batch.targets)?;
        losses.push(loss.to_dtype(DType::F64)?.to_scalar::<f64>()?);
    }
    Ok(losses)
}

/// Mean Eq. 1 loss per clip under true, zeroed, and shuffled video tokens.
///
/// The mask for a given clip index is identical across the three conditions,
/// so differences are attributable to the video input alone.
pub fn evaluate_inpainting(
    mae: &SpatialMae,
    store: &ParamStore,
    clips: &[PreparedClip],
    mask_mode: MaskMode,
    masking: &MaskingConfig,
    seed: u64,
) -> Result<InpaintingReport> {
    Ok(InpaintingReport {
        true_video: mean_loss(mae, store, clips, mask_mode, masking, seed, VideoCondition::True)?,
        zero_video: mean_loss(mae, store, clips, mask_mode, masking, seed, VideoCondition::Zeros)?,
        shuffled_video: mean_loss(
            mae,
            store,
            clips,
            mask_mode,
            masking,
            seed,
            VideoCondition::Shuffled,
        )?,
    })
}

/// Write metrics records stored in a report to a JSONL string (testing aid).
pub fn metrics_to_jsonl(metrics: &[MetricsRecord]) -> Result<String> {
    let mut out = String::new();
    for record in metrics {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    Ok(out)
}

#[allow(unused_imports)]
pub use crate::checkpoint::load_checkpoint;
