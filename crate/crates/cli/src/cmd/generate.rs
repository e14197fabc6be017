//! `egoav generate` — synthetic corpus generation.

use std::path::PathBuf;

use clap::Parser;
use egoav_core::scenes::{generate_corpus, CorpusConfig};

use crate::config::{FileConfig, GenerateOverrides, persist_resolved};
use crate::data::{config_err, resolve, runtime};
use crate::{CmdError, Ctx};

#[derive(Parser, Debug)]
pub struct Args {
    /// Number of scenes to render.
    #[arg(long)]
    scenes: Option<usize>,
    /// Scene duration in whole seconds (each yields that many 1 s clips).
    #[arg(long)]
    seconds: Option<usize>,
    /// Output directory for media, labels, and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    speakers_min: Option<usize>,
    #[arg(long)]
    speakers_max: Option<usize>,
    /// Disable the brightness cue on active sprites.
    #[arg(long)]
    no_visual_cue: bool,
    #[arg(long)]
    ambient_level: Option<f32>,
    #[arg(long)]
    camera_pan_max: Option<f32>,
    #[arg(long)]
    dataset: Option<String>,
}

pub fn run(ctx: &Ctx, args: &Args) -> Result<(), CmdError> {
    let mut section = ctx.base.generate.clone();
    let flag_layer = GenerateOverrides {
        scenes: args.scenes,
        seconds: args.seconds,
        height: args.height,
        width: args.width,
        speakers_min: args.speakers_min,
        speakers_max: args.speakers_max,
        visual_cue: if args.no_visual_cue { Some(false) } else { None },
        ambient_level: args.ambient_level,
        camera_pan_max: args.camera_pan_max,
        dataset: args.dataset.clone(),
        out: args.out.clone(),
    };
    let mut layered = FileConfig::default();
    layered.generate = flag_layer;
    {
        let mut merged = FileConfig::default();
        merged.generate = section;
        merged.merge(&layered);
        section = merged.generate;
    }

    let out = section
        .out
        .clone()
        .ok_or_else(|| config_err("generate requires --out"))?;
    let defaults = CorpusConfig::default();
    let corpus = CorpusConfig {
        n_scenes: section.scenes.unwrap_or(defaults.n_scenes),
        duration_s: section.seconds.unwrap_or(defaults.duration_s),
        height: section.height.unwrap_or(defaults.height),
        width: section.width.unwrap_or(defaults.width),
        speakers_min: section.speakers_min.unwrap_or(defaults.speakers_min),
        speakers_max: section.speakers_max.unwrap_or(defaults.speakers_max),
        visual_activity_cue: section.visual_cue.unwrap_or(defaults.visual_activity_cue),
        ambient_level: section.ambient_level.unwrap_or(defaults.ambient_level),
        camera_pan_max: section.camera_pan_max.unwrap_or(defaults.camera_pan_max),
        dataset: section.dataset.clone().unwrap_or(defaults.dataset),
        seed: ctx.seed,
    };
    if corpus.n_scenes == 0 {
        return Err(config_err("scene count must be positive"));
    }

    let out_dir = resolve(&ctx.workdir, &out);
    let resolved = FileConfig {
        workdir: Some(ctx.workdir.clone()),
        seed: Some(ctx.seed),
        tiny: Some(ctx.tiny),
        generate: GenerateOverrides {
            scenes: Some(corpus.n_scenes),
            seconds: Some(corpus.duration_s),
            height: Some(corpus.height),
            width: Some(corpus.width),
            speakers_min: Some(corpus.speakers_min),
            speakers_max: Some(corpus.speakers_max),
            visual_cue: Some(corpus.visual_activity_cue),
            ambient_level: Some(corpus.ambient_level),
            camera_pan_max: Some(corpus.camera_pan_max),
            dataset: Some(corpus.dataset.clone()),
            out: Some(out.clone()),
        },
        ..Default::default()
    };
    persist_resolved(&out_dir, &resolved)?;

    let manifest = generate_corpus(&corpus, &out_dir).map_err(runtime)?;
    println!(
        "wrote {} clips across {} scenes to {}",
        manifest.records.len(),
        corpus.n_scenes,
        out_dir.display()
    );
    println!("manifest: {}", manifest.path().display());
    Ok(())
}
