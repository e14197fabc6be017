//! `egoav stats` — corpus normalization statistics.

use std::path::PathBuf;

use clap::Parser;
use egoav_core::tokenizer::compute_norm_stats;

use crate::config::{FileConfig, StatsOverrides, persist_resolved};
use crate::data::{clips_only, config_err, load_manifest, load_split, resolve, runtime};
use crate::{CmdError, Ctx};

#[derive(Parser, Debug)]
pub struct Args {
    /// Manifest file of the corpus to measure.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for stats.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, args: &Args) -> Result<(), CmdError> {
    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| ctx.base.stats.manifest.clone())
        .ok_or_else(|| config_err("stats requires --manifest"))?;
    let out = args
        .out
        .clone()
        .or_else(|| ctx.base.stats.out.clone())
        .ok_or_else(|| config_err("stats requires --out"))?;

    let out_dir = resolve(&ctx.workdir, &out);
    let resolved = FileConfig {
        workdir: Some(ctx.workdir.clone()),
        seed: Some(ctx.seed),
        tiny: Some(ctx.tiny),
        stats: StatsOverrides {
            manifest: Some(manifest_path.clone()),
            out: Some(out.clone()),
        },
        ..Default::default()
    };
    persist_resolved(&out_dir, &resolved)?;

    let manifest = load_manifest(&resolve(&ctx.workdir, &manifest_path))?;
    let clips = clips_only(load_split(&manifest, "train")?);
    let corpus_id = clips[0].dataset.clone();
    let stats = compute_norm_stats(clips.iter(), &corpus_id).map_err(runtime)?;
    let path = out_dir.join("stats.json");
    std::fs::write(&path, stats.to_json().map_err(runtime)?).map_err(runtime)?;
    println!(
        "stats over {} clips: audio mean {:.4} std {:.4}",
        clips.len(),
        stats.audio_mean,
        stats.audio_std
    );
    println!("wrote {}", path.display());
    Ok(())
}
