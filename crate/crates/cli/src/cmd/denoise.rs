//! `egoav finetune-denoise` / `egoav eval-denoise` — binaural denoising.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use clap::Parser;
use egoav_core::checkpoint::{load_checkpoint, Checkpoint};
use egoav_core::clip::RawClip;
use egoav_core::denoise::{
    istft, mix_at_snr, si_sdri, stft, stft_distance, train_denoiser, DenoiseModel,
    DenoiseTrainConfig, UNetConfig, VisionMode,
};
use egoav_core::denoise::train::{apply_mask, ideal_ratio_mask};
use egoav_core::model::{init_params, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{DenoiseOverrides, FileConfig, persist_resolved};
use crate::data::{
    clips_only, config_err, load_manifest, load_or_compute_stats, load_split, mean_ci95,
    resolve, runtime,
};
use crate::{CmdError, Ctx};

#[derive(Parser, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Visual conditioning: none | raw-frames | pretrained.
    #[arg(long)]
    vision: Option<String>,
    /// Pretrained backbone checkpoint (needed for --vision pretrained).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use a freshly initialized backbone for pretrained-mode fusion.
    #[arg(long)]
    from_scratch: bool,
    /// Comma-separated training/eval SNR levels in dB.
    #[arg(long, value_delimiter = ',')]
    snr: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop after this many optimizer steps (smoke runs).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Cap on evaluation clips.
    #[arg(long)]
    eval_clips: Option<usize>,
}

#[derive(Parser, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for report.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Mask source: predicted | all-ones-debug | oracle-irm.
    #[arg(long)]
    mask: Option<String>,
    /// Saved model directory (required for --mask predicted).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    snr: Option<Vec<f64>>,
    #[arg(long)]
    eval_clips: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MaskSource {
    Predicted,
    AllOnesDebug,
    OracleIrm,
}

fn parse_vision(s: &str) -> Result<VisionMode, CmdError> {
    match s {
        "none" => Ok(VisionMode::None),
        "raw-frames" => Ok(VisionMode::RawFrames),
        "pretrained" => Ok(VisionMode::Pretrained),
        other => Err(config_err(format!(
            "unknown vision mode '{other}' (expected none, raw-frames, or pretrained)"
        ))),
    }
}

fn parse_mask(s: &str) -> Result<MaskSource, CmdError> {
    match s {
        "predicted" => Ok(MaskSource::Predicted),
        "all-ones-debug" => Ok(MaskSource::AllOnesDebug),
        "oracle-irm" => Ok(MaskSource::OracleIrm),
        other => Err(config_err(format!(
            "unknown mask source '{other}' (expected predicted, all-ones-debug, or oracle-irm)"
        ))),
    }
}

#[derive(Serialize)]
struct SnrRow {
    snr_db: f64,
    si_sdri_mean: f64,
    si_sdri_ci95: f64,
    stft_distance_mean: f64,
    n_clips: usize,
}

#[derive(Serialize)]
struct DenoiseRunReport {
    mode: String,
    final_loss: Option<f64>,
    rows: Vec<SnrRow>,
}

/// Deterministic noise partner for clip `i`: another clip drawn by seeded RNG.
fn noise_index(rng: &mut ChaCha8Rng, i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let mut j = rng.gen_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    j
}

/// Score one mask source over held-out clips at each SNR level.
fn evaluate_clips(
    clips: &[RawClip],
    snr_levels: &[f64],
    seed: u64,
    mut estimate: impl FnMut(&egoav_core::denoise::Mixture, &RawClip) -> Result<ndarray::Array2<f32>, CmdError>,
) -> Result<Vec<SnrRow>, CmdError> {
    let mut rows = Vec::new();
    for &snr_db in snr_levels {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (snr_db.to_bits().rotate_left(17)));
        let mut improvements = Vec::new();
        let mut distances = Vec::new();
        for (i, clip) in clips.iter().enumerate() {
            let noise = &clips[noise_index(&mut rng, i, clips.len())];
            let mixture = mix_at_snr(&clip.waveform, &noise.waveform, snr_db).map_err(runtime)?;
            let est = estimate(&mixture, clip)?;
            improvements
                .push(si_sdri(&mixture.target, &est, &mixture.mixed).map_err(runtime)?);
            distances.push(stft_distance(&mixture.target, &est).map_err(runtime)?);
        }
        let (si_mean, si_ci) = mean_ci95(&improvements);
        let (dist_mean, _) = mean_ci95(&distances);
        rows.push(SnrRow {
            snr_db,
            si_sdri_mean: si_mean,
            si_sdri_ci95: si_ci,
            stft_distance_mean: dist_mean,
            n_clips: clips.len(),
        });
    }
    Ok(rows)
}

fn print_rows(rows: &[SnrRow]) {
    println!("{:>8} {:>12} {:>10} {:>12}", "snr(dB)", "si-sdri(dB)", "ci95", "stft-dist");
    for row in rows {
        println!(
            "{:>8.1} {:>12.4} {:>10.4} {:>12.5}",
            row.snr_db, row.si_sdri_mean, row.si_sdri_ci95, row.stft_distance_mean
        );
    }
}

fn eval_split_clips(
    manifest: &egoav_core::scenes::Manifest,
    cap: Option<usize>,
) -> Result<Vec<RawClip>, CmdError> {
    let split = if !manifest.split("test").is_empty() {
        "test"
    } else if !manifest.split("val").is_empty() {
        "val"
    } else {
        "train"
    };
    let mut clips = clips_only(load_split(manifest, split)?);
    if let Some(cap) = cap {
        clips.truncate(cap.max(1));
    }
    Ok(clips)
}

fn fresh_checkpoint(
    ctx: &Ctx,
    manifest_path: &Path,
    manifest: &egoav_core::scenes::Manifest,
) -> Result<Checkpoint, CmdError> {
    let model_config = if ctx.tiny {
        ModelConfig::tiny(ctx.seed)
    } else {
        ModelConfig {
            seed: ctx.seed,
            ..Default::default()
        }
    };
    let stats_path = manifest_path
        .parent()
        .unwrap_or(Path::new("."))
        .join("stats.json");
    let stats = load_or_compute_stats(&stats_path, manifest)?;
    let store = init_params(&model_config, &Device::Cpu, DType::F32).map_err(runtime)?;
    Ok(Checkpoint::from_store(&model_config, &store, &stats))
}

pub fn run_finetune(ctx: &Ctx, args: &FinetuneArgs) -> Result<(), CmdError> {
    let section = &ctx.base.denoise;
    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| section.manifest.clone())
        .ok_or_else(|| config_err("finetune-denoise requires --manifest"))?;
    let out = args
        .out
        .clone()
        .or_else(|| section.out.clone())
        .ok_or_else(|| config_err("finetune-denoise requires --out"))?;
    let vision_str = args
        .vision
        .clone()
        .or_else(|| section.vision.clone())
        .unwrap_or_else(|| "none".into());
    let vision = parse_vision(&vision_str)?;
    let checkpoint_path = args.checkpoint.clone().or_else(|| section.checkpoint.clone());
    let from_scratch = args.from_scratch || section.from_scratch.unwrap_or(false);
    if vision == VisionMode::Pretrained && checkpoint_path.is_none() && !from_scratch {
        return Err(config_err(
            "pretrained vision needs --checkpoint, or --from-scratch for a random backbone",
        ));
    }

    let defaults = DenoiseTrainConfig::default();
    let unet = if ctx.tiny {
        UNetConfig::tiny(ctx.seed)
    } else {
        UNetConfig {
            seed: ctx.seed,
            ..Default::default()
        }
    };
    let config = DenoiseTrainConfig {
        epochs: args.epochs.or(section.epochs).unwrap_or(defaults.epochs),
        batch_size: args
            .batch_size
            .or(section.batch_size)
            .unwrap_or(if ctx.tiny { 8 } else { defaults.batch_size }),
        lr: args.lr.or(section.lr).unwrap_or(defaults.lr),
        snr_levels: args
            .snr
            .clone()
            .or_else(|| section.snr.clone())
            .unwrap_or(defaults.snr_levels),
        vision,
        unet,
        seed: ctx.seed,
        max_steps: args.steps.or(section.steps),
        ..defaults
    };
    if config.snr_levels.is_empty() {
        return Err(config_err("empty SNR level list"));
    }

    let out_dir = resolve(&ctx.workdir, &out);
    let resolved = FileConfig {
        workdir: Some(ctx.workdir.clone()),
        seed: Some(ctx.seed),
        tiny: Some(ctx.tiny),
        denoise: DenoiseOverrides {
            manifest: Some(manifest_path.clone()),
            out: Some(out.clone()),
            checkpoint: checkpoint_path.clone(),
            from_scratch: Some(from_scratch),
            vision: Some(vision_str.clone()),
            snr: Some(config.snr_levels.clone()),
            epochs: Some(config.epochs),
            steps: config.max_steps,
            batch_size: Some(config.batch_size),
            lr: Some(config.lr),
            model: None,
            mask: None,
            eval_clips: args.eval_clips.or(section.eval_clips),
        },
        ..Default::default()
    };
    persist_resolved(&out_dir, &resolved)?;

    let manifest = load_manifest(&resolve(&ctx.workdir, &manifest_path))?;
    let train_clips = clips_only(load_split(&manifest, "train")?);
    let checkpoint = if vision == VisionMode::Pretrained {
        Some(match &checkpoint_path {
            Some(path) => {
                load_checkpoint(&resolve(&ctx.workdir, path), &Device::Cpu).map_err(runtime)?
            }
            None => fresh_checkpoint(ctx, &resolve(&ctx.workdir, &manifest_path), &manifest)?,
        })
    } else {
        None
    };

    // targets and noises draw from the same pool; pairings avoid self-mixing
    let (model, report) =
        train_denoiser(&train_clips, &train_clips, checkpoint.as_ref(), &config)
            .map_err(runtime)?;
    let model_dir = out_dir.join("model");
    model.save(&model_dir).map_err(runtime)?;
    println!("saved model to {}", model_dir.display());
    if let Some(loss) = report.final_loss() {
        println!("final training loss: {loss:.5}");
    }

    let eval_clips = eval_split_clips(&manifest, args.eval_clips.or(section.eval_clips))?;
    let needs_clip = vision != VisionMode::None;
    let rows = evaluate_clips(&eval_clips, &config.snr_levels, ctx.seed, |mixture, clip| {
        model
            .denoise(&mixture.mixed, needs_clip.then_some(clip))
            .map_err(runtime)
    })?;
    print_rows(&rows);

    let run_report = DenoiseRunReport {
        mode: vision_str,
        final_loss: report.final_loss(),
        rows,
    };
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&run_report).map_err(runtime)?,
    )
    .map_err(runtime)?;
    println!("wrote {}", out_dir.join("report.json").display());
    Ok(())
}

pub fn run_eval(ctx: &Ctx, args: &EvalArgs) -> Result<(), CmdError> {
    let section = &ctx.base.denoise;
    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| section.manifest.clone())
        .ok_or_else(|| config_err("eval-denoise requires --manifest"))?;
    let mask_str = args
        .mask
        .clone()
        .or_else(|| section.mask.clone())
        .unwrap_or_else(|| "predicted".into());
    let mask = parse_mask(&mask_str)?;
    let model_dir = args.model.clone().or_else(|| section.model.clone());
    if mask == MaskSource::Predicted && model_dir.is_none() {
        return Err(config_err("--mask predicted requires --model"));
    }
    let snr_levels = args
        .snr
        .clone()
        .or_else(|| section.snr.clone())
        .unwrap_or_else(|| vec![0.0, 2.5, 5.0]);
    if snr_levels.is_empty() {
        return Err(config_err("empty SNR level list"));
    }

    let manifest = load_manifest(&resolve(&ctx.workdir, &manifest_path))?;
    let clips = eval_split_clips(&manifest, args.eval_clips.or(section.eval_clips))?;

    let rows = match mask {
        MaskSource::Predicted => {
            let model =
                DenoiseModel::load(&resolve(&ctx.workdir, &model_dir.unwrap())).map_err(runtime)?;
            let needs_clip = model.vision != VisionMode::None;
            evaluate_clips(&clips, &snr_levels, ctx.seed, |mixture, clip| {
                model
                    .denoise(&mixture.mixed, needs_clip.then_some(clip))
                    .map_err(runtime)
            })?
        }
        // identity mask: the estimate is the mixture itself, so the
        // improvement must come out exactly zero
        MaskSource::AllOnesDebug => evaluate_clips(&clips, &snr_levels, ctx.seed, |mixture, _| {
            Ok(mixture.mixed.clone())
        })?,
        MaskSource::OracleIrm => evaluate_clips(&clips, &snr_levels, ctx.seed, |mixture, _| {
            let spec = stft(&mixture.mixed).map_err(runtime)?;
            let irm = ideal_ratio_mask(mixture).map_err(runtime)?;
            let masked = apply_mask(&spec, &irm).map_err(runtime)?;
            istft(&masked, mixture.mixed.shape()[1]).map_err(runtime)
        })?,
    };
    print_rows(&rows);

    if let Some(out) = args.out.clone().or_else(|| section.out.clone()) {
        let out_dir = resolve(&ctx.workdir, &out);
        std::fs::create_dir_all(&out_dir).map_err(runtime)?;
        let report = DenoiseRunReport {
            mode: mask_str,
            final_loss: None,
            rows,
        };
        std::fs::write(
            out_dir.join("report.json"),
            serde_json::to_string_pretty(&report).map_err(runtime)?,
        )
        .map_err(runtime)?;
        println!("wrote {}", out_dir.join("report.json").display());
    }
    Ok(())
}
