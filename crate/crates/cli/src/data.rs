//! Shared data plumbing: manifest loading, normalization stats, checkpoints.

use std::path::{Path, PathBuf};

use egoav_core::clip::RawClip;
use egoav_core::scenes::{load_clip, ClipLabels, Manifest};
use egoav_core::tokenizer::{compute_norm_stats, NormalizationStats};

use crate::CmdError;

pub fn runtime(e: impl std::fmt::Display) -> CmdError {
    CmdError::Runtime(e.to_string())
}

pub fn config_err(e: impl std::fmt::Display) -> CmdError {
    CmdError::Config(e.to_string())
}

/// Resolve a possibly relative path against the workdir.
pub fn resolve(workdir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        workdir.join(path)
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest, CmdError> {
    Manifest::load(path).map_err(runtime)
}

/// Load every clip of one split, with labels.
pub fn load_split(
    manifest: &Manifest,
    split: &str,
) -> Result<Vec<(RawClip, ClipLabels)>, CmdError> {
    let records = manifest.split(split);
    if records.is_empty() {
        return Err(CmdError::Config(format!(
            "manifest has no '{split}' split clips"
        )));
    }
    records
        .iter()
        .map(|r| load_clip(&manifest.root, r).map_err(runtime))
        .collect()
}

pub fn clips_only(pairs: Vec<(RawClip, ClipLabels)>) -> Vec<RawClip> {
    pairs.into_iter().map(|(c, _)| c).collect()
}

/// Load stats from `path` if it exists, else compute them over the train
/// split and persist them at `path`.
pub fn load_or_compute_stats(
    path: &Path,
    manifest: &Manifest,
) -> Result<NormalizationStats, CmdError> {
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(runtime)?;
        return NormalizationStats::from_json(&text).map_err(runtime);
    }
    let clips = clips_only(load_split(manifest, "train")?);
    let corpus_id = clips
        .first()
        .map(|c| c.dataset.clone())
        .unwrap_or_else(|| "corpus".into());
    let stats = compute_norm_stats(clips.iter(), &corpus_id).map_err(runtime)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(runtime)?;
    }
    std::fs::write(path, stats.to_json().map_err(runtime)?).map_err(runtime)?;
    Ok(stats)
}

/// Mean and half-width of a normal-approximation 95% confidence interval.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}
