//! `egoav pretrain` — masked audio-visual pretraining.

use std::path::{Path, PathBuf};

use clap::Parser;
use egoav_core::masking::MaskingConfig;
use egoav_core::model::ModelConfig;
use egoav_core::pretrain::{train, TrainConfig, TrainOptions};

use crate::config::{FileConfig, PretrainOverrides, persist_resolved};
use crate::data::{
    clips_only, config_err, load_manifest, load_or_compute_stats, load_split, resolve, runtime,
};
use crate::{CmdError, Ctx};

#[derive(Parser, Debug, Default)]
pub struct Args {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stop after this many optimizer steps (smoke runs).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Channel-masking frequency r.
    #[arg(long)]
    pub mask_r: Option<f64>,
    /// Token-mode hidden fraction.
    #[arg(long)]
    pub token_ratio: Option<f64>,
    #[arg(long)]
    pub flip_prob: Option<f64>,
    /// Normalization stats file (computed over the train split if absent).
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

/// Section after flag layering.
pub fn layer(ctx: &Ctx, args: &Args) -> PretrainOverrides {
    let mut merged = FileConfig::default();
    merged.pretrain = ctx.base.pretrain.clone();
    let mut flags = FileConfig::default();
    flags.pretrain = PretrainOverrides {
        manifest: args.manifest.clone(),
        out: args.out.clone(),
        steps: args.steps,
        epochs: args.epochs,
        batch_size: args.batch_size,
        peak_lr: args.peak_lr,
        warmup_epochs: args.warmup_epochs,
        weight_decay: args.weight_decay,
        mask_r: args.mask_r,
        token_ratio: args.token_ratio,
        flip_prob: args.flip_prob,
        stats: args.stats.clone(),
    };
    merged.merge(&flags);
    merged.pretrain
}

pub struct ResolvedPretrain {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub stats: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub steps: Option<usize>,
}

pub fn resolve_section(
    ctx: &Ctx,
    section: &PretrainOverrides,
) -> Result<ResolvedPretrain, CmdError> {
    let manifest = section
        .manifest
        .clone()
        .ok_or_else(|| config_err("pretrain requires --manifest"))?;
    let out = section
        .out
        .clone()
        .ok_or_else(|| config_err("pretrain requires --out"))?;
    let mask_r = section.mask_r.unwrap_or(0.20);
    if !(0.0..=1.0).contains(&mask_r) {
        return Err(config_err(format!("r out of range: {mask_r} not in [0, 1]")));
    }
    let token_ratio = section.token_ratio.unwrap_or(0.50);
    if !(0.0..=1.0).contains(&token_ratio) {
        return Err(config_err(format!("token ratio out of range: {token_ratio}")));
    }
    let model = if ctx.tiny {
        ModelConfig::tiny(ctx.seed)
    } else {
        ModelConfig {
            seed: ctx.seed,
            ..Default::default()
        }
    };
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        epochs: section.epochs.unwrap_or(defaults.epochs),
        batch_size: section
            .batch_size
            .unwrap_or(if ctx.tiny { 8 } else { defaults.batch_size }),
        peak_lr: section.peak_lr.unwrap_or(defaults.peak_lr),
        warmup_epochs: section.warmup_epochs.unwrap_or(defaults.warmup_epochs),
        weight_decay: section.weight_decay.unwrap_or(defaults.weight_decay),
        masking: MaskingConfig {
            r: mask_r,
            token_ratio,
            seed: ctx.seed,
        },
        augment_flip_prob: section.flip_prob.unwrap_or(defaults.augment_flip_prob),
        clip_grad_norm: None,
        seed: ctx.seed,
    };
    let stats = section
        .stats
        .clone()
        .unwrap_or_else(|| default_stats_path(&manifest));
    Ok(ResolvedPretrain {
        manifest,
        out,
        stats,
        model,
        train,
        steps: section.steps,
    })
}

fn default_stats_path(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("stats.json")
}

pub fn to_file_config(ctx: &Ctx, r: &ResolvedPretrain) -> FileConfig {
    FileConfig {
        workdir: Some(ctx.workdir.clone()),
        seed: Some(ctx.seed),
        tiny: Some(ctx.tiny),
        pretrain: PretrainOverrides {
            manifest: Some(r.manifest.clone()),
            out: Some(r.out.clone()),
            steps: r.steps,
            epochs: Some(r.train.epochs),
            batch_size: Some(r.train.batch_size),
            peak_lr: Some(r.train.peak_lr),
            warmup_epochs: Some(r.train.warmup_epochs),
            weight_decay: Some(r.train.weight_decay),
            mask_r: Some(r.train.masking.r),
            token_ratio: Some(r.train.masking.token_ratio),
            flip_prob: Some(r.train.augment_flip_prob),
            stats: Some(r.stats.clone()),
        },
        ..Default::default()
    }
}

pub fn run(ctx: &Ctx, args: &Args) -> Result<(), CmdError> {
    let section = layer(ctx, args);
    let resolved = resolve_section(ctx, &section)?;
    let out_dir = resolve(&ctx.workdir, &resolved.out);
    persist_resolved(&out_dir, &to_file_config(ctx, &resolved))?;

    let manifest = load_manifest(&resolve(&ctx.workdir, &resolved.manifest))?;
    let train_clips = clips_only(load_split(&manifest, "train")?);
    let val_clips = load_split(&manifest, "val")
        .map(clips_only)
        .unwrap_or_default();
    let stats = load_or_compute_stats(&resolve(&ctx.workdir, &resolved.stats), &manifest)?;

    let options = TrainOptions {
        out_dir: Some(out_dir.clone()),
        max_steps: resolved.steps,
        stop_flag: None,
    };
    let report = train(
        &train_clips,
        &val_clips,
        &stats,
        &resolved.model,
        &resolved.train,
        &options,
    )
    .map_err(runtime)?;

    let first = report.metrics.first().map(|m| m.loss).unwrap_or(f64::NAN);
    let last = report.metrics.last().map(|m| m.loss).unwrap_or(f64::NAN);
    println!(
        "pretrain: {} steps, loss {first:.4} -> {last:.4}",
        report.metrics.len()
    );
    if let Some(v) = report.best_val_loss {
        println!("best val loss: {v:.4}");
    }
    println!("checkpoints in {}", out_dir.display());
    Ok(())
}
