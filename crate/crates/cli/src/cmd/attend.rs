//! `egoav attend` — audio-to-video attention maps from the shared encoder.

use std::path::PathBuf;

use candle_core::{DType, Device};
use clap::Parser;
use egoav_core::checkpoint::load_checkpoint;
use egoav_core::masking::MaskSpec;
use egoav_core::model::{BatchInput, SpatialMae};
use egoav_core::pretrain::PreparedClip;
use egoav_core::scenes::load_clip;
use ndarray::Array2;

use crate::config::{AttendOverrides, FileConfig, persist_resolved};
use crate::data::{config_err, load_manifest, resolve, runtime};
use crate::{CmdError, Ctx};

#[derive(Parser, Debug)]
pub struct Args {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pretrained checkpoint (.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Clip to visualize.
    #[arg(long)]
    clip_id: Option<String>,
    /// Shared encoder layer to read attention from.
    #[arg(long)]
    layer: Option<usize>,
}

/// Nearest-neighbor upsample of the patch-grid map to frame resolution,
/// blended as a yellow heat layer over the first frame.
fn overlay_png(
    frame: ndarray::ArrayView3<f32>,
    map: &Array2<f32>,
    path: &std::path::Path,
) -> Result<(), CmdError> {
    let (h, w, _) = frame.dim();
    let (rows, cols) = map.dim();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let a = map[(
                (y * rows / h).min(rows - 1),
                (x * cols / w).min(cols - 1),
            )]
            .clamp(0.0, 1.0);
            let px = |c: usize, heat: f32| {
                ((frame[(y, x, c)].clamp(0.0, 1.0) * 0.4 + heat * 0.6) * 255.0).round() as u8
            };
            img.put_pixel(x as u32, y as u32, image::Rgb([px(0, a), px(1, a), px(2, 0.0)]));
        }
    }
    img.save(path).map_err(runtime)
}

pub fn run(ctx: &Ctx, args: &Args) -> Result<(), CmdError> {
    let section = &ctx.base.attend;
    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| section.manifest.clone())
        .ok_or_else(|| config_err("attend requires --manifest"))?;
    let out = args
        .out
        .clone()
        .or_else(|| section.out.clone())
        .ok_or_else(|| config_err("attend requires --out"))?;
    let checkpoint_path = args
        .checkpoint
        .clone()
        .or_else(|| section.checkpoint.clone())
        .ok_or_else(|| config_err("attend requires --checkpoint"))?;
    let clip_id = args
        .clip_id
        .clone()
        .or_else(|| section.clip_id.clone())
        .ok_or_else(|| config_err("attend requires --clip-id"))?;
    let layer = args.layer.or(section.layer).unwrap_or(0);

    let checkpoint =
        load_checkpoint(&resolve(&ctx.workdir, &checkpoint_path), &Device::Cpu).map_err(runtime)?;
    // validate the layer index against the model before any heavy work
    if layer >= checkpoint.config.enc_layers_shared {
        return Err(config_err(format!(
            "layer {layer} out of range: model has {} shared encoder layers",
            checkpoint.config.enc_layers_shared
        )));
    }

    let out_dir = resolve(&ctx.workdir, &out);
    let resolved = FileConfig {
        workdir: Some(ctx.workdir.clone()),
        seed: Some(ctx.seed),
        tiny: Some(ctx.tiny),
        attend: AttendOverrides {
            manifest: Some(manifest_path.clone()),
            out: Some(out.clone()),
            checkpoint: Some(checkpoint_path.clone()),
            clip_id: Some(clip_id.clone()),
            layer: Some(layer),
        },
        ..Default::default()
    };
    persist_resolved(&out_dir, &resolved)?;

    let manifest = load_manifest(&resolve(&ctx.workdir, &manifest_path))?;
    let record = manifest
        .records
        .iter()
        .find(|r| r.clip_id == clip_id)
        .ok_or_else(|| config_err(format!("clip '{clip_id}' not in manifest")))?;
    let (clip, _labels) = load_clip(&manifest.root, record).map_err(runtime)?;

    let store = checkpoint
        .build_store(&Device::Cpu, DType::F32)
        .map_err(runtime)?;
    let mae = SpatialMae::new(checkpoint.config.clone()).map_err(runtime)?;
    let prepared = PreparedClip::new(&clip, &checkpoint.stats).map_err(runtime)?;
    let (video, audio) = prepared.grids(false).map_err(runtime)?;
    let spec = MaskSpec::empty(audio.total_tokens());
    let batch =
        BatchInput::new(&[(&video, &audio, spec)], &Device::Cpu, DType::F32).map_err(runtime)?;
    let maps = mae.attention_maps(&store, &batch, layer).map_err(runtime)?;
    let map = &maps[0];

    let json: Vec<Vec<f32>> = map.rows().into_iter().map(|r| r.to_vec()).collect();
    let json_path = out_dir.join("attention.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&json).map_err(runtime)?,
    )
    .map_err(runtime)?;

    let png_path = out_dir.join("overlay.png");
    overlay_png(clip.frames.index_axis(ndarray::Axis(0), 0), map, &png_path)?;

    println!(
        "attention over a {}x{} patch grid (layer {layer}) for clip {clip_id}",
        map.dim().0,
        map.dim().1
    );
    println!("wrote {} and {}", json_path.display(), png_path.display());
    Ok(())
}
