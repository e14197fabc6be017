//! `egoav sweep-r` — pretrain and evaluate across channel-masking
//! frequencies, mirroring the paper's r-ablation table layout.

use std::path::PathBuf;

use clap::Parser;
use egoav_core::masking::{MaskMode, MaskingConfig};
use egoav_core::model::{ModelConfig, SpatialMae};
use egoav_core::pretrain::{
    evaluate_inpainting, prepare_clips, train, TrainConfig, TrainOptions,
};
use serde::Serialize;

use crate::config::{FileConfig, SweepOverrides, persist_resolved};
use crate::data::{
    clips_only, config_err, load_manifest, load_or_compute_stats, load_split, resolve, runtime,
};
use crate::{CmdError, Ctx};

#[derive(Parser, Debug)]
pub struct Args {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated channel-masking frequencies.
    #[arg(long, value_delimiter = ',')]
    r_list: Option<Vec<f64>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Cap on validation clips used for the inpainting evaluation.
    #[arg(long)]
    eval_clips: Option<usize>,
}

#[derive(Debug, Serialize)]
struct SweepRow {
    r: f64,
    true_video: f64,
    zero_video: f64,
    shuffled_video: f64,
}

pub fn run(ctx: &Ctx, args: &Args) -> Result<(), CmdError> {
    let mut section = ctx.base.sweep.clone();
    {
        let mut merged = FileConfig::default();
        merged.sweep = section;
        let mut flags = FileConfig::default();
        flags.sweep = SweepOverrides {
            manifest: args.manifest.clone(),
            out: args.out.clone(),
            r_list: args.r_list.clone(),
            steps: args.steps,
            epochs: args.epochs,
            batch_size: args.batch_size,
            eval_clips: args.eval_clips,
        };
        merged.merge(&flags);
        section = merged.sweep;
    }
    let manifest_path = section
        .manifest
        .clone()
        .ok_or_else(|| config_err("sweep-r requires --manifest"))?;
    let out = section
        .out
        .clone()
        .ok_or_else(|| config_err("sweep-r requires --out"))?;
    let r_list = section
        .r_list
        .clone()
        .unwrap_or_else(|| vec![0.0, 0.2, 0.5, 0.8, 1.0]);
    if r_list.is_empty() {
        return Err(config_err("empty r list"));
    }
    if let Some(bad) = r_list.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(config_err(format!("r out of range: {bad}")));
    }

    let out_dir = resolve(&ctx.workdir, &out);
    let resolved = FileConfig {
        workdir: Some(ctx.workdir.clone()),
        seed: Some(ctx.seed),
        tiny: Some(ctx.tiny),
        sweep: SweepOverrides {
            manifest: Some(manifest_path.clone()),
            out: Some(out.clone()),
            r_list: Some(r_list.clone()),
            steps: section.steps,
            epochs: section.epochs,
            batch_size: section.batch_size,
            eval_clips: section.eval_clips,
        },
        ..Default::default()
    };
    persist_resolved(&out_dir, &resolved)?;

    let manifest = load_manifest(&resolve(&ctx.workdir, &manifest_path))?;
    let train_clips = clips_only(load_split(&manifest, "train")?);
    let mut val_clips = load_split(&manifest, "val")
        .map(clips_only)
        .unwrap_or_default();
    if val_clips.is_empty() {
        val_clips = train_clips.clone();
    }
    if let Some(cap) = section.eval_clips {
        val_clips.truncate(cap.max(1));
    }
    let stats = load_or_compute_stats(
        &resolve(&ctx.workdir, &manifest_path)
            .parent()
            .unwrap_or(std::path::Path::new("."))
            .join("stats.json"),
        &manifest,
    )?;

    let model_config = if ctx.tiny {
        ModelConfig::tiny(ctx.seed)
    } else {
        ModelConfig {
            seed: ctx.seed,
            ..Default::default()
        }
    };
    let defaults = TrainConfig::default();
    let prepared_val = prepare_clips(&val_clips, &stats).map_err(runtime)?;

    let mut rows = Vec::new();
    for &r in &r_list {
        let train_config = TrainConfig {
            epochs: section.epochs.unwrap_or(defaults.epochs),
            batch_size: section.batch_size.unwrap_or(if ctx.tiny { 8 } else { defaults.batch_size }),
            masking: MaskingConfig {
                r,
                token_ratio: 0.5,
                seed: ctx.seed,
            },
            seed: ctx.seed,
            ..defaults.clone()
        };
        let run_dir = out_dir.join(format!("r_{:03}", (r * 100.0).round() as usize));
        let report = train(
            &train_clips,
            &val_clips,
            &stats,
            &model_config,
            &train_config,
            &TrainOptions {
                out_dir: Some(run_dir),
                max_steps: section.steps,
                stop_flag: None,
            },
        )
        .map_err(runtime)?;

        // downstream proxy: channel-inpainting loss under the three video
        // conditions on held-out clips
        let mae = SpatialMae::new(model_config.clone()).map_err(runtime)?;
        let store = report
            .checkpoint
            .build_store(&candle_core::Device::Cpu, candle_core::DType::F32)
            .map_err(runtime)?;
        let eval = evaluate_inpainting(
            &mae,
            &store,
            &prepared_val,
            MaskMode::Channel,
            &MaskingConfig {
                r,
                token_ratio: 0.5,
                seed: ctx.seed,
            },
            ctx.seed,
        )
        .map_err(runtime)?;
        let (true_video, zero_video, shuffled_video) = eval.means();
        rows.push(SweepRow {
            r,
            true_video,
            zero_video,
            shuffled_video,
        });
    }

    println!("{:>6} {:>12} {:>12} {:>14}", "r", "true-video", "zero-video", "shuffled-video");
    for row in &rows {
        println!(
            "{:>6.2} {:>12.5} {:>12.5} {:>14.5}",
            row.r, row.true_video, row.zero_video, row.shuffled_video
        );
    }
    let json = serde_json::to_string_pretty(&rows).map_err(runtime)?;
    std::fs::write(out_dir.join("sweep.json"), json).map_err(runtime)?;
    println!("wrote {}", out_dir.join("sweep.json").display());
    Ok(())
}
