//! ASD finetuning: split learning rates for the pretrained backbone and the
//! new fusion/head parameters, with per-epoch multiplicative decay.

use candle_core::{DType, Device, Tensor};
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::clip::RawClip;
use crate::error::{CoreError, Result};
use crate::masking::{finetune_mask, FinetuneChannel, MaskSpec};
use crate::model::{BatchInput, ModelConfig, ParamStore, SpatialMae};
use crate::optim::{AdamW, AdamWConfig};
use crate::pretrain::PreparedClip;
use crate::tokenizer::NormalizationStats;

use super::fusion::{fuse_features, init_fusion_params};
use super::head::{asd_forward, init_head_params};
use super::map::AsdPrediction;
use super::{FaceTrack, FusionConfig};

/// One training unit: a clip and the face tracks detected in it.
#[derive(Debug, Clone)]
pub struct AsdSample {
    pub clip: RawClip,
    pub tracks: Vec<FaceTrack>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AsdConfig {
    pub epochs: usize,
    /// Learning rate for the new fusion and head parameters.
    pub head_lr: f64,
    /// Learning rate for the pretrained backbone.
    pub backbone_lr: f64,
    /// Multiplicative decay applied to both groups after every epoch.
    pub lr_decay: f64,
    pub freeze_backbone: bool,
    pub fusion: FusionConfig,
    pub seed: u64,
    pub max_steps: Option<usize>,
}

impl Default for AsdConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            head_lr: 1e-4,
            backbone_lr: 1e-5,
            lr_decay: 0.95,
            freeze_backbone: false,
            fusion: FusionConfig::default(),
            seed: 0,
            max_steps: None,
        }
    }
}

/// Learning rates of the (head, backbone) groups at the start of an epoch.
pub fn group_lrs(config: &AsdConfig, epoch: usize) -> (f64, f64) {
    let decay = config.lr_decay.powi(epoch as i32);
    (config.head_lr * decay, config.backbone_lr * decay)
}

fn is_new_param(name: &str) -> bool {
    name.starts_with("fusion.") || name.starts_with("asd.")
}

/// The full ASD model: backbone, fusion decoder and classifier head share one
/// parameter store.
pub struct AsdModel {
    pub store: ParamStore,
    pub model_config: ModelConfig,
    pub fusion: FusionConfig,
    pub stats: NormalizationStats,
    mae: SpatialMae,
}

impl AsdModel {
    pub fn from_checkpoint(
        checkpoint: &Checkpoint,
        fusion: FusionConfig,
        seed: u64,
    ) -> Result<Self> {
        let device = Device::Cpu;
        let mut store = checkpoint.build_store(&device, DType::F32)?;
        init_fusion_params(&mut store, &checkpoint.config, &fusion, seed)?;
        init_head_params(&mut store, &fusion, seed.wrapping_add(1))?;
        Ok(Self {
            store,
            model_config: checkpoint.config.clone(),
            fusion,
            stats: checkpoint.stats.clone(),
            mae: SpatialMae::new(checkpoint.config.clone())?,
        })
    }

    /// Fused per-frame features for a clip under the given channel mask.
    pub fn fused_features(&self, clip: &PreparedClip, spec: &MaskSpec) -> Result<Tensor> {
        let (video, audio) = clip.grids(false)?;
        let batch = BatchInput::new(
            &[(&video, &audio, spec.clone())],
            &self.store.device,
            self.store.dtype,
        )?;
        let enc = self.mae.encode(&self.store, &batch)?;
        fuse_features(
            &self.store,
            &self.model_config,
            &self.fusion,
            &enc.f_av,
            clip.num_frames(),
        )
    }

    /// Score every track of a sample; evaluation masks the right channel
    /// deterministically.
    pub fn score_sample(&self, sample: &AsdSample) -> Result<Vec<AsdPrediction>> {
        let clip = PreparedClip::new(&sample.clip, &self.stats)?;
        let (_, audio) = clip.grids(false)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = finetune_mask(FinetuneChannel::Right, audio.per_channel, &mut rng);
        let fused = self.fused_features(&clip, &spec)?.squeeze(0)?;
        let mut predictions = Vec::new();
        for track in &sample.tracks {
            let scores: Vec<f32> = asd_forward(&self.store, &self.fusion, track, &fused)?
                .to_dtype(DType::F32)?
                .to_vec1()?;
            for (frame_idx, (&score, &label)) in
                scores.iter().zip(track.labels.iter()).enumerate()
            {
                predictions.push(AsdPrediction {
                    clip_id: track.clip_id.clone(),
                    face_id: track.face_id.clone(),
                    frame_idx,
                    score: score as f64,
                    label,
                });
            }
        }
        Ok(predictions)
    }
}

#[derive(Debug, Clone)]
pub struct AsdReport {
    /// Per-step BCE losses.
    pub losses: Vec<f64>,
    /// (head, backbone) learning rates in effect during the last epoch run.
    pub final_lrs: (f64, f64),
}

fn bce(scores: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let eps = 1e-6;
    let s = scores.clamp(eps, 1.0 - eps)?;
    let pos = (labels * s.log()?)?;
    let neg = ((1.0 - labels)? * (1.0 - &s)?.log()?)?;
    Ok(((pos + neg)?.mean_all()? * -1.0)?)
}

/// Finetune the pretrained backbone plus fresh fusion/head parameters with
/// binary cross-entropy on per-frame activity labels.
pub fn finetune_asd(
    samples: &[AsdSample],
    checkpoint: &Checkpoint,
    config: &AsdConfig,
) -> Result<(AsdModel, AsdReport)> {
    config.fusion.validate()?;
    let labeled_frames: usize = samples
        .iter()
        .flat_map(|s| &s.tracks)
        .map(|t| t.labels.len())
        .sum();
    if labeled_frames == 0 {
        return Err(CoreError::InvalidConfig(
            "label-free dataset: no track frames to finetune on".into(),
        ));
    }

    let model = AsdModel::from_checkpoint(checkpoint, config.fusion.clone(), config.seed)?;
    let backbone_scale = if config.freeze_backbone {
        0.0
    } else {
        config.backbone_lr / config.head_lr
    };
    let groups = model
        .store
        .iter()
        .map(|(name, var)| {
            let scale = if is_new_param(name) { 1.0 } else { backbone_scale };
            (name.clone(), var.clone(), scale, false)
        })
        .collect();
    let mut opt = AdamW::new(
        groups,
        AdamWConfig {
            lr: config.head_lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;

    let prepared: Vec<PreparedClip> = samples
        .iter()
        .map(|s| PreparedClip::new(&s.clip, &model.stats))
        .collect::<Result<_>>()?;

    let mut losses = Vec::new();
    let mut step = 0usize;
    let mut final_lrs = group_lrs(config, 0);
    'epochs: for epoch in 0..config.epochs {
        let (head_lr, _) = group_lrs(config, epoch);
        final_lrs = group_lrs(config, epoch);
        opt.set_lr(head_lr);
        let mut rng = ChaCha8Rng::seed_from_u64(
            config.seed.wrapping_add((epoch as u64).wrapping_mul(0x9e3779b97f4a7c15)),
        );
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        for &idx in &order {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let sample = &samples[idx];
            if sample.tracks.is_empty() {
                continue;
            }
            let (_, audio) = prepared[idx].grids(false)?;
            let spec = finetune_mask(FinetuneChannel::Random, audio.per_channel, &mut rng);
            let fused = model.fused_features(&prepared[idx], &spec)?.squeeze(0)?;

            let mut score_parts = Vec::new();
            let mut label_data = Vec::new();
            for track in &sample.tracks {
                score_parts.push(asd_forward(&model.store, &model.fusion, track, &fused)?);
                label_data.extend(track.labels.iter().map(|&l| f32::from(u8::from(l))));
            }
            let scores = Tensor::cat(&score_parts, 0)?;
            let labels = Tensor::from_vec(label_data, scores.dims1()?, &model.store.device)?
                .to_dtype(model.store.dtype)?;
            let loss = bce(&scores, &labels)?;
            let loss_val = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !loss_val.is_finite() {
                return Err(CoreError::NonFiniteLoss {
                    step,
                    clip_ids: vec![sample.clip.clip_id.clone()],
                });
            }
            let grads = loss.backward()?;
            opt.step(&grads)?;
            losses.push(loss_val);
            step += 1;
        }
    }

    Ok((model, AsdReport { losses, final_lrs }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::tokenizer::NormalizationStats;
    use ndarray::{Array2, Array4};
    use rand::Rng;

    fn toy_checkpoint(seed: u64) -> Checkpoint {
        let config = ModelConfig::grad_check(seed);
        let store = init_params(&config, &Device::Cpu, DType::F32).unwrap();
        Checkpoint::from_store(&config, &store, &NormalizationStats::identity("toy"))
    }

    fn toy_sample(seed: u64, active_first: bool) -> AsdSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = Array4::from_shape_fn((5, 32, 32, 3), |_| rng.gen::<f32>());
        let waveform = Array2::from_shape_fn((2, 16_000), |_| rng.gen::<f32>() * 0.2 - 0.1);
        let clip = RawClip::new(frames, waveform, format!("clip{seed}"), "toy", 0.0).unwrap();
        let track = |face: &str, active: bool, s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let base = if active { 0.8 } else { 0.2 };
            let crops =
                Array4::from_shape_fn((5, 112, 112, 3), |_| base + 0.1 * rng.gen::<f32>());
            FaceTrack::new(
                format!("clip{seed}"),
                face,
                crops,
                vec![active; 5],
                vec![[0.1, 0.1, 0.2, 0.2]; 5],
            )
            .unwrap()
        };
        AsdSample {
            clip,
            tracks: vec![
                track("f0", active_first, seed * 10 + 1),
                track("f1", !active_first, seed * 10 + 2),
            ],
        }
    }

    #[test]
    fn group_lrs_decay_by_095_each_epoch() {
        let config = AsdConfig::default();
        assert_eq!(group_lrs(&config, 0), (1e-4, 1e-5));
        let (h, b) = group_lrs(&config, 1);
        assert!((h - 1e-4 * 0.95).abs() < 1e-18);
        assert!((b - 1e-5 * 0.95).abs() < 1e-19);
    }

    #[test]
    fn label_free_dataset_rejected() {
        let checkpoint = toy_checkpoint(1);
        let mut sample = toy_sample(2, true);
        sample.tracks.clear();
        let err = match finetune_asd(&[sample], &checkpoint, &AsdConfig::default()) {
            Err(e) => e,
            Ok(_) => panic!("expected an error for a label-free dataset"),
        };
        assert!(err.to_string().contains("label-free"), "{err}");
    }

    #[test]
    fn freeze_flag_leaves_backbone_bit_identical() {
        let checkpoint = toy_checkpoint(3);
        let sample = toy_sample(4, true);
        let config = AsdConfig {
            epochs: 1,
            freeze_backbone: true,
            max_steps: Some(2),
            fusion: FusionConfig { out_dim: 16 },
            ..Default::default()
        };
        let (model, report) = finetune_asd(&[sample], &checkpoint, &config).unwrap();
        assert!(!report.losses.is_empty());
        let mut backbone_checked = 0;
        for (name, var) in model.store.iter() {
            if is_new_param(name) {
                continue;
            }
            let a: Vec<f32> = checkpoint.params[name].flatten_all().unwrap().to_vec1().unwrap();
            let b: Vec<f32> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(a, b, "backbone param {name} changed while frozen");
            backbone_checked += 1;
        }
        assert!(backbone_checked > 0);
    }

    #[test]
    fn unfrozen_backbone_actually_moves() {
        let checkpoint = toy_checkpoint(5);
        let sample = toy_sample(6, true);
        let config = AsdConfig {
            epochs: 1,
            head_lr: 1e-2,
            backbone_lr: 1e-3,
            max_steps: Some(2),
            fusion: FusionConfig { out_dim: 16 },
            ..Default::default()
        };
        let (model, _) = finetune_asd(&[sample], &checkpoint, &config).unwrap();
        let mut moved = false;
        for (name, var) in model.store.iter() {
            if is_new_param(name) {
                continue;
            }
            let a: Vec<f32> = checkpoint.params[name].flatten_all().unwrap().to_vec1().unwrap();
            let b: Vec<f32> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
            if a != b {
                moved = true;
                break;
            }
        }
        assert!(moved, "no backbone parameter changed");
    }

    #[test]
    fn overfits_toy_tracks_to_perfect_training_map() {
        let checkpoint = toy_checkpoint(9);
        let samples: Vec<AsdSample> = (0..4).map(|i| toy_sample(20 + i, i % 2 == 0)).collect();
        let config = AsdConfig {
            epochs: 100,
            head_lr: 1e-2,
            freeze_backbone: true,
            max_steps: Some(60),
            fusion: FusionConfig { out_dim: 16 },
            seed: 9,
            ..Default::default()
        };
        let (model, report) = finetune_asd(&samples, &checkpoint, &config).unwrap();
        assert!(report.losses.last().unwrap() < report.losses.first().unwrap());
        let mut predictions = Vec::new();
        for sample in &samples {
            predictions.extend(model.score_sample(sample).unwrap());
        }
        let map = crate::asd::evaluate_map(&predictions).unwrap();
        assert!(map > 0.99, "training mAP {map}");
    }

    #[test]
    fn scoring_is_deterministic() {
        let checkpoint = toy_checkpoint(7);
        let sample = toy_sample(8, true);
        let model = AsdModel::from_checkpoint(
            &checkpoint,
            FusionConfig { out_dim: 16 },
            11,
        )
        .unwrap();
        let a = model.score_sample(&sample).unwrap();
        let b = model.score_sample(&sample).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
    }
}
