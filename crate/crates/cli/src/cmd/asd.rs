//! `egoav finetune-asd` / `egoav eval-asd` — active speaker detection.

use std::path::PathBuf;

use candle_core::{DType, Device};
use clap::Parser;
use egoav_core::asd::{
    evaluate_map, finetune_asd, read_predictions_csv, tracks_from_labels,
    write_predictions_csv, AsdConfig, AsdSample, FusionConfig,
};
use egoav_core::checkpoint::{load_checkpoint, Checkpoint};
use egoav_core::model::{init_params, ModelConfig};
use serde::Serialize;

use crate::config::{AsdOverrides, FileConfig, persist_resolved};
use crate::data::{
    config_err, load_manifest, load_or_compute_stats, load_split, resolve, runtime,
};
use crate::{CmdError, Ctx};

#[derive(Parser, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pretrained backbone checkpoint (.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Start from a freshly initialized backbone instead.
    #[arg(long)]
    from_scratch: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    head_lr: Option<f64>,
    #[arg(long)]
    backbone_lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    freeze_backbone: bool,
    #[arg(long)]
    fusion_dim: Option<usize>,
}

#[derive(Parser, Debug)]
pub struct EvalArgs {
    /// Predictions CSV written by finetune-asd (offline scoring path).
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Optional directory for report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct AsdRunReport {
    map: f64,
    n_predictions: usize,
    n_train_samples: usize,
    final_losses: Vec<f64>,
    from_scratch: bool,
}

/// Build labeled samples for a split.
fn split_samples(
    manifest: &egoav_core::scenes::Manifest,
    split: &str,
) -> Result<Vec<AsdSample>, CmdError> {
    load_split(manifest, split)?
        .into_iter()
        .map(|(clip, labels)| {
            let tracks = tracks_from_labels(&clip, &labels).map_err(runtime)?;
            Ok(AsdSample { clip, tracks })
        })
        .collect()
}

pub fn run_finetune(ctx: &Ctx, args: &FinetuneArgs) -> Result<(), CmdError> {
    let section = &ctx.base.asd;
    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| section.manifest.clone())
        .ok_or_else(|| config_err("finetune-asd requires --manifest"))?;
    let out = args
        .out
        .clone()
        .or_else(|| section.out.clone())
        .ok_or_else(|| config_err("finetune-asd requires --out"))?;
    let checkpoint_path = args.checkpoint.clone().or_else(|| section.checkpoint.clone());
    let from_scratch = args.from_scratch || section.from_scratch.unwrap_or(false);
    if checkpoint_path.is_none() && !from_scratch {
        return Err(config_err(
            "finetune-asd needs --checkpoint, or --from-scratch to run without one",
        ));
    }

    let defaults = AsdConfig::default();
    let config = AsdConfig {
        epochs: args.epochs.or(section.epochs).unwrap_or(defaults.epochs),
        head_lr: args.head_lr.or(section.head_lr).unwrap_or(defaults.head_lr),
        backbone_lr: args
            .backbone_lr
            .or(section.backbone_lr)
            .unwrap_or(defaults.backbone_lr),
        lr_decay: args.lr_decay.or(section.lr_decay).unwrap_or(defaults.lr_decay),
        freeze_backbone: args.freeze_backbone || section.freeze_backbone.unwrap_or(false),
        fusion: FusionConfig {
            out_dim: args
                .fusion_dim
                .or(section.fusion_dim)
                .unwrap_or(FusionConfig::default().out_dim),
        },
        seed: ctx.seed,
        max_steps: args.max_steps.or(section.max_steps),
    };

    let out_dir = resolve(&ctx.workdir, &out);
    let resolved = FileConfig {
        workdir: Some(ctx.workdir.clone()),
        seed: Some(ctx.seed),
        tiny: Some(ctx.tiny),
        asd: AsdOverrides {
            manifest: Some(manifest_path.clone()),
            out: Some(out.clone()),
            checkpoint: checkpoint_path.clone(),
            from_scratch: Some(from_scratch),
            epochs: Some(config.epochs),
            max_steps: config.max_steps,
            head_lr: Some(config.head_lr),
            backbone_lr: Some(config.backbone_lr),
            lr_decay: Some(config.lr_decay),
            freeze_backbone: Some(config.freeze_backbone),
            fusion_dim: Some(config.fusion.out_dim),
            predictions: None,
        },
        ..Default::default()
    };
    persist_resolved(&out_dir, &resolved)?;

    let manifest = load_manifest(&resolve(&ctx.workdir, &manifest_path))?;
    let checkpoint = match &checkpoint_path {
        Some(path) => load_checkpoint(&resolve(&ctx.workdir, path), &Device::Cpu).map_err(runtime)?,
        None => {
            // "w/o pretraining" control: fresh backbone, corpus stats
            let model_config = if ctx.tiny {
                ModelConfig::tiny(ctx.seed)
            } else {
                ModelConfig {
                    seed: ctx.seed,
                    ..Default::default()
                }
            };
            let stats_path = resolve(&ctx.workdir, &manifest_path)
                .parent()
                .unwrap_or(std::path::Path::new("."))
                .join("stats.json");
            let stats = load_or_compute_stats(&stats_path, &manifest)?;
            let store = init_params(&model_config, &Device::Cpu, DType::F32).map_err(runtime)?;
            Checkpoint::from_store(&model_config, &store, &stats)
        }
    };

    let train_samples = split_samples(&manifest, "train")?;
    let (model, report) = finetune_asd(&train_samples, &checkpoint, &config).map_err(runtime)?;

    let eval_split = if manifest.split("test").is_empty() { "val" } else { "test" };
    let eval_samples = split_samples(&manifest, eval_split)?;
    let mut predictions = Vec::new();
    for sample in &eval_samples {
        predictions.extend(model.score_sample(sample).map_err(runtime)?);
    }
    let map = evaluate_map(&predictions).map_err(runtime)?;

    let csv_path = out_dir.join("predictions.csv");
    write_predictions_csv(&csv_path, &predictions).map_err(runtime)?;
    let run_report = AsdRunReport {
        map,
        n_predictions: predictions.len(),
        n_train_samples: train_samples.len(),
        final_losses: report.losses.iter().rev().take(5).rev().copied().collect(),
        from_scratch,
    };
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&run_report).map_err(runtime)?,
    )
    .map_err(runtime)?;

    println!("{eval_split} mAP: {map:.4} over {} predictions", predictions.len());
    println!("wrote {}", csv_path.display());
    Ok(())
}

pub fn run_eval(ctx: &Ctx, args: &EvalArgs) -> Result<(), CmdError> {
    let predictions_path = args
        .predictions
        .clone()
        .or_else(|| ctx.base.asd.predictions.clone())
        .ok_or_else(|| config_err("eval-asd requires --predictions"))?;
    let predictions =
        read_predictions_csv(&resolve(&ctx.workdir, &predictions_path)).map_err(runtime)?;
    let map = evaluate_map(&predictions).map_err(runtime)?;
    println!("mAP: {map:.6} over {} predictions", predictions.len());
    if let Some(out) = &args.out {
        let out_dir = resolve(&ctx.workdir, out);
        std::fs::create_dir_all(&out_dir).map_err(runtime)?;
        let report = serde_json::json!({
            "map": map,
            "n_predictions": predictions.len(),
            "predictions": predictions_path,
        });
        std::fs::write(
            out_dir.join("report.json"),
            serde_json::to_string_pretty(&report).map_err(runtime)?,
        )
        .map_err(runtime)?;
    }
    Ok(())
}
