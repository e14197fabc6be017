//! Parameter storage and initialization.
//!
//! All linear and attention weights are Xavier-uniform; LayerNorm weights are
//! 1 with zero biases; channel and modality embeddings come from a truncated
//! normal (sigma 0.02, range [-2, 2] sigmas scaled); the mask token from a
//! plain normal (sigma 0.02). Everything is drawn from one seeded stream so
//! init is deterministic.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CoreError, Result};
use crate::model::ModelConfig;

/// Named model parameters backed by candle `Var`s.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    pub device: Device,
    pub dtype: DType,
}

impl ParamStore {
    pub fn new(device: Device, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            device,
            dtype,
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let var = Var::from_tensor(&tensor)?;
        self.vars.insert(name.to_string(), var);
        Ok(())
    }

    pub fn var(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| CoreError::ShapeMismatch(format!("missing parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        Ok(self.var(name)?.as_tensor().clone())
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Overwrite a parameter value in place.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        self.var(name)?.set(value)?;
        Ok(())
    }

    /// Deep copy with fresh `Var`s.
    pub fn clone_params(&self) -> Result<Self> {
        let mut out = Self::new(self.device.clone(), self.dtype);
        for (name, var) in &self.vars {
            out.insert(name, var.as_tensor().copy()?)?;
        }
        Ok(out)
    }

    /// Cast every parameter to a new dtype (used by the f64 gradient-check path).
    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let mut out = Self::new(self.device.clone(), dtype);
        for (name, var) in &self.vars {
            out.insert(name, var.as_tensor().to_dtype(dtype)?)?;
        }
        Ok(out)
    }
}

pub(crate) struct Initializer {
    rng: ChaCha8Rng,
    device: Device,
    dtype: DType,
}

impl Initializer {
    pub fn new(seed: u64, device: Device, dtype: DType) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            device,
            dtype,
        }
    }

    fn tensor(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::from_vec(data, shape, &self.device)?;
        Ok(t.to_dtype(self.dtype)?)
    }

    pub fn xavier_uniform(&mut self, shape: &[usize]) -> Result<Tensor> {
        let (fan_out, fan_in) = (shape[0], shape[1..].iter().product::<usize>());
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.tensor(data, shape)
    }

    pub fn trunc_normal(&mut self, shape: &[usize], sigma: f64, range: f64) -> Result<Tensor> {
        let dist = Normal::new(0.0, sigma).expect("valid sigma");
        let n: usize = shape.iter().product();
        let bound = range * sigma;
        let data: Vec<f64> = (0..n)
            .map(|_| loop {
                let x = dist.sample(&mut self.rng);
                if x.abs() <= bound {
                    break x;
                }
            })
            .collect();
        self.tensor(data, shape)
    }

    pub fn normal(&mut self, shape: &[usize], sigma: f64) -> Result<Tensor> {
        let dist = Normal::new(0.0, sigma).expect("valid sigma");
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.tensor(data, shape)
    }

    pub fn zeros(&self, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::zeros(shape, self.dtype, &self.device)?)
    }

    pub fn ones(&self, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::ones(shape, self.dtype, &self.device)?)
    }
}

fn init_linear(
    store: &mut ParamStore,
    init: &mut Initializer,
    prefix: &str,
    out_dim: usize,
    in_dim: usize,
) -> Result<()> {
    store.insert(&format!("{prefix}.weight"), init.xavier_uniform(&[out_dim, in_dim])?)?;
    store.insert(&format!("{prefix}.bias"), init.zeros(&[out_dim])?)?;
    Ok(())
}

fn init_layer_norm(store: &mut ParamStore, init: &mut Initializer, prefix: &str, dim: usize) -> Result<()> {
    store.insert(&format!("{prefix}.weight"), init.ones(&[dim])?)?;
    store.insert(&format!("{prefix}.bias"), init.zeros(&[dim])?)?;
    Ok(())
}

fn init_block(
    store: &mut ParamStore,
    init: &mut Initializer,
    prefix: &str,
    dim: usize,
    mlp_ratio: usize,
) -> Result<()> {
    init_layer_norm(store, init, &format!("{prefix}.ln1"), dim)?;
    init_linear(store, init, &format!("{prefix}.attn.qkv"), 3 * dim, dim)?;
    init_linear(store, init, &format!("{prefix}.attn.proj"), dim, dim)?;
    init_layer_norm(store, init, &format!("{prefix}.ln2"), dim)?;
    init_linear(store, init, &format!("{prefix}.mlp.fc1"), mlp_ratio * dim, dim)?;
    init_linear(store, init, &format!("{prefix}.mlp.fc2"), dim, mlp_ratio * dim)?;
    Ok(())
}

fn init_stack(
    store: &mut ParamStore,
    init: &mut Initializer,
    prefix: &str,
    layers: usize,
    dim: usize,
    mlp_ratio: usize,
) -> Result<()> {
    for i in 0..layers {
        init_block(store, init, &format!("{prefix}.{i}"), dim, mlp_ratio)?;
    }
    init_layer_norm(store, init, &format!("{prefix}.norm"), dim)?;
    Ok(())
}

/// Build a freshly initialized parameter set for `config`.
pub fn init_params(config: &ModelConfig, device: &Device, dtype: DType) -> Result<ParamStore> {
    config.validate()?;
    let mut store = ParamStore::new(device.clone(), dtype);
    let mut init = Initializer::new(config.seed, device.clone(), dtype);
    let (ed, dd) = (config.enc_dim, config.dec_dim);

    init_linear(&mut store, &mut init, "embed.video", ed, config.video_token_dim())?;
    init_linear(&mut store, &mut init, "embed.audio", ed, config.audio_token_dim())?;

    for name in ["chan_emb.enc.l", "chan_emb.enc.r", "mod_emb.enc.a", "mod_emb.enc.v"] {
        store.insert(name, init.trunc_normal(&[ed], 0.02, 2.0)?)?;
    }
    for name in ["chan_emb.dec.l", "chan_emb.dec.r", "mod_emb.dec.a", "mod_emb.dec.v"] {
        store.insert(name, init.trunc_normal(&[dd], 0.02, 2.0)?)?;
    }
    store.insert("mask_token", init.normal(&[dd], 0.02)?)?;

    init_stack(&mut store, &mut init, "enc_v", config.enc_layers_uni, ed, config.mlp_ratio)?;
    init_stack(&mut store, &mut init, "enc_a", config.enc_layers_uni, ed, config.mlp_ratio)?;
    init_stack(&mut store, &mut init, "enc_av", config.enc_layers_shared, ed, config.mlp_ratio)?;

    init_linear(&mut store, &mut init, "dec.proj", dd, ed)?;
    init_stack(&mut store, &mut init, "dec_av", config.dec_layers_shared, dd, config.mlp_ratio)?;
    init_stack(&mut store, &mut init, "dec_a", config.dec_layers_audio, dd, config.mlp_ratio)?;
    init_linear(&mut store, &mut init, "head", config.audio_token_dim(), dd)?;

    Ok(store)
}

/// True for parameters that should be excluded from weight decay: LayerNorm
/// weights and biases, all learnable embeddings, and every bias vector.
pub fn is_decay_excluded(name: &str) -> bool {
    name.contains(".ln1.")
        || name.contains(".ln2.")
        || name.contains(".norm.")
        || name.starts_with("chan_emb.")
        || name.starts_with("mod_emb.")
        || name == "mask_token"
        || name.ends_with(".bias")
}
