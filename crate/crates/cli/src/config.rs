//! Layered run configuration: defaults < config file < environment < flags.
//!
//! The file layer is TOML (or JSON by extension); the environment layer uses
//! the `EGOAV_` prefix with `EGOAV_<SECTION>_<KEY>` naming. Unknown keys are
//! rejected at every layer. Each command persists its fully resolved config
//! next to its outputs so any run can be reproduced from that file alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CmdError;

macro_rules! merge_opt {
    ($dst:expr, $src:expr, $($field:ident),+ $(,)?) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )+
    };
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub workdir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tiny: Option<bool>,
    pub generate: GenerateOverrides,
    pub stats: StatsOverrides,
    pub pretrain: PretrainOverrides,
    pub sweep: SweepOverrides,
    pub asd: AsdOverrides,
    pub denoise: DenoiseOverrides,
    pub attend: AttendOverrides,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateOverrides {
    pub scenes: Option<usize>,
    pub seconds: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub speakers_min: Option<usize>,
    pub speakers_max: Option<usize>,
    pub visual_cue: Option<bool>,
    pub ambient_level: Option<f32>,
    pub camera_pan_max: Option<f32>,
    pub dataset: Option<String>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct StatsOverrides {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainOverrides {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub steps: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub peak_lr: Option<f64>,
    pub warmup_epochs: Option<usize>,
    pub weight_decay: Option<f64>,
    pub mask_r: Option<f64>,
    pub token_ratio: Option<f64>,
    pub flip_prob: Option<f64>,
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOverrides {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub r_list: Option<Vec<f64>>,
    pub steps: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub eval_clips: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AsdOverrides {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub from_scratch: Option<bool>,
    pub epochs: Option<usize>,
    pub max_steps: Option<usize>,
    pub head_lr: Option<f64>,
    pub backbone_lr: Option<f64>,
    pub lr_decay: Option<f64>,
    pub freeze_backbone: Option<bool>,
    pub fusion_dim: Option<usize>,
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiseOverrides {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub from_scratch: Option<bool>,
    pub vision: Option<String>,
    pub snr: Option<Vec<f64>>,
    pub epochs: Option<usize>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub model: Option<PathBuf>,
    pub mask: Option<String>,
    pub eval_clips: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AttendOverrides {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub clip_id: Option<String>,
    pub layer: Option<usize>,
}

impl FileConfig {
    pub fn merge(&mut self, other: &FileConfig) {
        merge_opt!(self, other, workdir, seed, tiny);
        merge_opt!(
            self.generate, other.generate,
            scenes, seconds, height, width, speakers_min, speakers_max,
            visual_cue, ambient_level, camera_pan_max, dataset, out,
        );
        merge_opt!(self.stats, other.stats, manifest, out);
        merge_opt!(
            self.pretrain, other.pretrain,
            manifest, out, steps, epochs, batch_size, peak_lr, warmup_epochs,
            weight_decay, mask_r, token_ratio, flip_prob, stats,
        );
        merge_opt!(
            self.sweep, other.sweep,
            manifest, out, r_list, steps, epochs, batch_size, eval_clips,
        );
        merge_opt!(
            self.asd, other.asd,
            manifest, out, checkpoint, from_scratch, epochs, max_steps, head_lr,
            backbone_lr, lr_decay, freeze_backbone, fusion_dim, predictions,
        );
        merge_opt!(
            self.denoise, other.denoise,
            manifest, out, checkpoint, from_scratch, vision, snr, epochs, steps,
            batch_size, lr, model, mask, eval_clips,
        );
        merge_opt!(self.attend, other.attend, manifest, out, checkpoint, clip_id, layer);
    }
}

/// Load the file layer; format decided by extension (.json or TOML default).
pub fn load_file_config(path: &Path) -> Result<FileConfig, CmdError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CmdError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| format!("{e}"))
    } else {
        toml::from_str(&text).map_err(|e| format!("{e}"))
    };
    parsed.map_err(|e| CmdError::Config(format!("invalid config {}: {e}", path.display())))
}

const SECTIONS: [&str; 7] = ["generate", "stats", "pretrain", "sweep", "asd", "denoise", "attend"];

/// Build the environment layer from `EGOAV_*` variables. Unknown keys fail.
pub fn env_config() -> Result<FileConfig, CmdError> {
    env_config_from(std::env::vars())
}

pub fn env_config_from(
    vars: impl Iterator<Item = (String, String)>,
) -> Result<FileConfig, CmdError> {
    let mut table = toml::Table::new();
    for (key, raw) in vars {
        let Some(rest) = key.strip_prefix("EGOAV_") else {
            continue;
        };
        let rest = rest.to_ascii_lowercase();
        let value = parse_toml_value(&raw);
        let (section, field) = match SECTIONS
            .iter()
            .find(|s| rest.starts_with(&format!("{s}_")))
        {
            Some(section) => (Some(*section), rest[section.len() + 1..].to_string()),
            None => (None, rest.clone()),
        };
        match section {
            Some(section) => {
                let entry = table
                    .entry(section.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                let toml::Value::Table(t) = entry else { unreachable!() };
                t.insert(field, value);
            }
            None => {
                table.insert(field, value);
            }
        }
    }
    FileConfig::deserialize(toml::Value::Table(table))
        .map_err(|e| CmdError::Config(format!("invalid EGOAV_ environment override: {e}")))
}

/// Interpret an env value: try TOML scalar/array syntax, else treat as string.
fn parse_toml_value(raw: &str) -> toml::Value {
    if let Ok(v) = raw.parse::<i64>() {
        return toml::Value::Integer(v);
    }
    if let Ok(v) = raw.parse::<f64>() {
        return toml::Value::Float(v);
    }
    if let Ok(v) = raw.parse::<bool>() {
        return toml::Value::Boolean(v);
    }
    if raw.starts_with('[') {
        if let Ok(table) = toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            if let Some(v) = table.get("v") {
                return v.clone();
            }
        }
    }
    toml::Value::String(raw.to_string())
}

/// The three pre-flag layers combined: defaults, file, environment.
pub fn base_config(config_path: Option<&Path>) -> Result<FileConfig, CmdError> {
    let mut base = FileConfig::default();
    if let Some(path) = config_path {
        base.merge(&load_file_config(path)?);
    }
    base.merge(&env_config()?);
    Ok(base)
}

/// Echo a resolved config and persist it next to the outputs as TOML.
pub fn persist_resolved(out_dir: &Path, resolved: &FileConfig) -> Result<(), CmdError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CmdError::Config(format!("cannot create {}: {e}", out_dir.display())))?;
    let text = toml::to_string_pretty(resolved)
        .map_err(|e| CmdError::Config(format!("config serialization: {e}")))?;
    println!("# resolved config\n{text}");
    std::fs::write(out_dir.join("resolved_config.toml"), text)
        .map_err(|e| CmdError::Config(format!("cannot persist resolved config: {e}")))?;
    Ok(())
}
