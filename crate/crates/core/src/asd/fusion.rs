//! Per-frame fusion: a single cross-attention decoder layer that turns the
//! encoder's token features into one feature vector per video frame.

use candle_core::{Tensor, D};
use candle_nn::ops::softmax;

use crate::error::{CoreError, Result};
use crate::model::blocks::{layer_norm, linear, mlp};
use crate::model::embed::frame_index_embedding;
use crate::model::init::{Initializer, ParamStore};
use crate::model::ModelConfig;

use super::FusionConfig;

/// Add the fusion decoder parameters to an existing store.
pub fn init_fusion_params(
    store: &mut ParamStore,
    model: &ModelConfig,
    fusion: &FusionConfig,
    seed: u64,
) -> Result<()> {
    fusion.validate()?;
    let d = model.enc_dim;
    let mut init = Initializer::new(seed, store.device.clone(), store.dtype);
    let mut lin = |store: &mut ParamStore, prefix: &str, out: usize, inp: usize| -> Result<()> {
        let w = init.xavier_uniform(&[out, inp])?;
        store.insert(&format!("{prefix}.weight"), w)?;
        store.insert(&format!("{prefix}.bias"), init.zeros(&[out])?)?;
        Ok(())
    };
    lin(store, "fusion.q", d, d)?;
    lin(store, "fusion.k", d, d)?;
    lin(store, "fusion.v", d, d)?;
    lin(store, "fusion.attn_proj", d, d)?;
    lin(store, "fusion.mlp.fc1", d * model.mlp_ratio, d)?;
    lin(store, "fusion.mlp.fc2", d, d * model.mlp_ratio)?;
    lin(store, "fusion.out", fusion.out_dim, d)?;
    for ln in ["fusion.kv_norm", "fusion.mlp_norm"] {
        store.insert(&format!("{ln}.weight"), init.ones(&[d])?)?;
        store.insert(&format!("{ln}.bias"), init.zeros(&[d])?)?;
    }
    Ok(())
}

fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, n, d) = x.dims3()?;
    Ok(x.reshape((b, n, heads, d / heads))?
        .transpose(1, 2)?
        .contiguous()?)
}

/// Fuse token features into per-query features, one query per frame index.
///
/// `f_av` is `[B, N, enc_dim]`; the output is `[B, len(frame_indices),
/// out_dim]`. Keys and values come from `f_av`; queries are fixed sinusoidal
/// frame-index embeddings, so the output is a pure function of the query and
/// the token set.
pub fn fuse_features_indexed(
    store: &ParamStore,
    model: &ModelConfig,
    fusion: &FusionConfig,
    f_av: &Tensor,
    frame_indices: &[usize],
) -> Result<Tensor> {
    fusion.validate()?;
    if frame_indices.is_empty() {
        return Err(CoreError::InvalidConfig(
            "fusion needs at least one frame query".into(),
        ));
    }
    let (b, _, d) = f_av.dims3()?;
    let t = frame_indices.len();
    let mut q_data = Vec::with_capacity(t * d);
    for &frame in frame_indices {
        q_data.extend(frame_index_embedding(frame, d)?);
    }
    let queries = Tensor::from_vec(q_data, (1, t, d), f_av.device())?
        .to_dtype(f_av.dtype())?
        .broadcast_as((b, t, d))?
        .contiguous()?;

    let kv = layer_norm(store, "fusion.kv_norm", f_av)?;
    let q = split_heads(&linear(store, "fusion.q", &queries)?, model.enc_heads)?;
    let k = split_heads(&linear(store, "fusion.k", &kv)?, model.enc_heads)?;
    let v = split_heads(&linear(store, "fusion.v", &kv)?, model.enc_heads)?;
    let scale = ((d / model.enc_heads) as f64).powf(-0.5);
    let logits = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * scale)?;
    let weights = softmax(&logits, D::Minus1)?;
    let context = weights.matmul(&v)?;
    let context = context.transpose(1, 2)?.contiguous()?.reshape((b, t, d))?;
    let h = linear(store, "fusion.attn_proj", &context)?;
    let h = (&h + mlp(store, "fusion.mlp", &layer_norm(store, "fusion.mlp_norm", &h)?)?)?;
    linear(store, "fusion.out", &h)
}

/// Standard entry point: one query per clip frame, indices `0..t`.
pub fn fuse_features(
    store: &ParamStore,
    model: &ModelConfig,
    fusion: &FusionConfig,
    f_av: &Tensor,
    t: usize,
) -> Result<Tensor> {
    let indices: Vec<usize> = (0..t).collect();
    fuse_features_indexed(store, model, fusion, f_av, &indices)
}
