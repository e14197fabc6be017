//! Single-archive checkpoints: model config, parameters, normalization
//! stats, optimizer state, counters and rng states in one tar file.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{init_params, ModelConfig, ParamStore};
use crate::tokenizer::NormalizationStats;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    schema_version: u32,
    epoch: usize,
    step: usize,
    opt_step: usize,
    rng: Option<ChaCha8Rng>,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: HashMap<String, Tensor>,
    pub stats: NormalizationStats,
    /// Optimizer moment tensors keyed `m.<name>` / `v.<name>`; empty for
    /// inference-only checkpoints.
    pub optim: HashMap<String, Tensor>,
    pub opt_step: usize,
    pub epoch: usize,
    pub step: usize,
    pub rng: Option<ChaCha8Rng>,
}

impl Checkpoint {
    pub fn from_store(
        config: &ModelConfig,
        store: &ParamStore,
        stats: &NormalizationStats,
    ) -> Self {
        let params = store
            .iter()
            .map(|(name, var)| (name.clone(), var.as_tensor().clone()))
            .collect();
        Self {
            config: config.clone(),
            params,
            stats: stats.clone(),
            optim: HashMap::new(),
            opt_step: 0,
            epoch: 0,
            step: 0,
            rng: None,
        }
    }

    /// Rebuild a trainable parameter store from the stored tensors.
    pub fn build_store(&self, device: &Device, dtype: DType) -> Result<ParamStore> {
        let store = init_params(&self.config, device, dtype)?;
        let expected = store.names();
        if expected.len() != self.params.len() {
            return Err(CoreError::Checkpoint(format!(
                "parameter count mismatch: config implies {}, archive has {}",
                expected.len(),
                self.params.len()
            )));
        }
        for name in &expected {
            let tensor = self
                .params
                .get(name)
                .ok_or_else(|| CoreError::Checkpoint(format!("missing parameter {name}")))?;
            store.set(name, &tensor.to_dtype(dtype)?)?;
        }
        Ok(store)
    }
}

fn append_file(builder: &mut tar::Builder<File>, dir: &Path, name: &str) -> Result<()> {
    builder
        .append_path_with_name(dir.join(name), name)
        .map_err(|e| CoreError::Checkpoint(format!("archiving {name}: {e}")))
}

/// Write a checkpoint archive atomically (temp file + rename).
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let dir = tempfile::tempdir()?;
    std::fs::write(dir.path().join("config.json"), checkpoint.config.to_json()?)?;
    std::fs::write(dir.path().join("stats.json"), checkpoint.stats.to_json()?)?;
    let meta = Meta {
        schema_version: SCHEMA_VERSION,
        epoch: checkpoint.epoch,
        step: checkpoint.step,
        opt_step: checkpoint.opt_step,
        rng: checkpoint.rng.clone(),
    };
    std::fs::write(dir.path().join("meta.json"), serde_json::to_vec(&meta)?)?;
    candle_core::safetensors::save(&checkpoint.params, dir.path().join("params.safetensors"))?;
    if !checkpoint.optim.is_empty() {
        candle_core::safetensors::save(&checkpoint.optim, dir.path().join("optim.safetensors"))?;
    }

    let tmp_path = path.with_extension("tmp");
    let mut builder = tar::Builder::new(File::create(&tmp_path)?);
    append_file(&mut builder, dir.path(), "config.json")?;
    append_file(&mut builder, dir.path(), "stats.json")?;
    append_file(&mut builder, dir.path(), "meta.json")?;
    append_file(&mut builder, dir.path(), "params.safetensors")?;
    if !checkpoint.optim.is_empty() {
        append_file(&mut builder, dir.path(), "optim.safetensors")?;
    }
    builder
        .into_inner()
        .map_err(|e| CoreError::Checkpoint(e.to_string()))?;
    std::fs::rename(&tmp_path, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, device: &Device) -> Result<Checkpoint> {
    let dir = tempfile::tempdir()?;
    let mut archive = tar::Archive::new(File::open(path)?);
    archive
        .unpack(dir.path())
        .map_err(|e| CoreError::Checkpoint(format!("unpacking {}: {e}", path.display())))?;

    let read = |name: &str| -> Result<String> {
        std::fs::read_to_string(dir.path().join(name))
            .map_err(|e| CoreError::Checkpoint(format!("{name} missing from archive: {e}")))
    };
    let meta: Meta = serde_json::from_str(&read("meta.json")?)?;
    if meta.schema_version > SCHEMA_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported schema version {} (max {})",
            meta.schema_version, SCHEMA_VERSION
        )));
    }
    let config = ModelConfig::from_json(&read("config.json")?)?;
    let stats = NormalizationStats::from_json(&read("stats.json")?)?;
    let params = candle_core::safetensors::load(dir.path().join("params.safetensors"), device)?;
    let optim_path = dir.path().join("optim.safetensors");
    let optim = if optim_path.exists() {
        candle_core::safetensors::load(optim_path, device)?
    } else {
        HashMap::new()
    };

    Ok(Checkpoint {
        config,
        params,
        stats,
        optim,
        opt_step: meta.opt_step,
        epoch: meta.epoch,
        step: meta.step,
        rng: meta.rng,
    })
}
