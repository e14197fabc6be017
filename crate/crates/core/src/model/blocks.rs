//! Transformer building blocks over named parameters.
//!
//! Blocks are pre-norm: `x + attn(ln1(x))`, `x + mlp(ln2(x))`; each stack is
//! followed by a LayerNorm since its output feeds non-block consumers.

use candle_core::{Tensor, D};
use candle_nn::ops::softmax;

use crate::error::Result;
use crate::model::init::ParamStore;

pub fn linear(store: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let w = store.get(&format!("{prefix}.weight"))?;
    let b = store.get(&format!("{prefix}.bias"))?;
    let y = x.broadcast_matmul(&w.t()?)?;
    Ok(y.broadcast_add(&b)?)
}

pub fn layer_norm(store: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let w = store.get(&format!("{prefix}.weight"))?;
    let b = store.get(&format!("{prefix}.bias"))?;
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let eps = 1e-6;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(normed.broadcast_mul(&w)?.broadcast_add(&b)?)
}

/// Multi-head self-attention. Returns `(output, attention)` where attention
/// is the post-softmax weights `[B, H, N, N]` (only materialized on request).
pub fn attention(
    store: &ParamStore,
    prefix: &str,
    x: &Tensor,
    heads: usize,
    want_weights: bool,
) -> Result<(Tensor, Option<Tensor>)> {
    let (b, n, d) = x.dims3()?;
    let hd = d / heads;
    let qkv = linear(store, &format!("{prefix}.qkv"), x)?; // [B,N,3D]
    let split = |i: usize| -> Result<Tensor> {
        let t = qkv.narrow(2, i * d, d)?;
        Ok(t.reshape((b, n, heads, hd))?.transpose(1, 2)?.contiguous()?)
    };
    let q = split(0)?;
    let k = split(1)?;
    let v = split(2)?;
    let scale = (hd as f64).powf(-0.5);
    let logits = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * scale)?;
    let weights = softmax(&logits, D::Minus1)?;
    let out = weights.matmul(&v)?; // [B,H,N,hd]
    let out = out.transpose(1, 2)?.contiguous()?.reshape((b, n, d))?;
    let out = linear(store, &format!("{prefix}.proj"), &out)?;
    Ok((out, if want_weights { Some(weights) } else { None }))
}

pub fn mlp(store: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let h = linear(store, &format!("{prefix}.fc1"), x)?;
    let h = h.gelu_erf()?;
    linear(store, &format!("{prefix}.fc2"), &h)
}

/// One pre-norm transformer block.
pub fn block(
    store: &ParamStore,
    prefix: &str,
    x: &Tensor,
    heads: usize,
    want_weights: bool,
) -> Result<(Tensor, Option<Tensor>)> {
    let normed = layer_norm(store, &format!("{prefix}.ln1"), x)?;
    let (attn_out, weights) = attention(store, &format!("{prefix}.attn"), &normed, heads, want_weights)?;
    let x = (x + attn_out)?;
    let normed = layer_norm(store, &format!("{prefix}.ln2"), &x)?;
    let x = (&x + mlp(store, &format!("{prefix}.mlp"), &normed)?)?;
    Ok((x, weights))
}

/// A stack of blocks plus the trailing LayerNorm. `capture_layer`, when set,
/// returns that layer's attention weights.
pub fn stack(
    store: &ParamStore,
    prefix: &str,
    x: &Tensor,
    layers: usize,
    heads: usize,
    capture_layer: Option<usize>,
) -> Result<(Tensor, Option<Tensor>)> {
    let mut x = x.clone();
    let mut captured = None;
    for i in 0..layers {
        let want = capture_layer == Some(i);
        let (y, w) = block(store, &format!("{prefix}.{i}"), &x, heads, want)?;
        x = y;
        if want {
            captured = w;
        }
    }
    let x = layer_norm(store, &format!("{prefix}.norm"), &x)?;
    Ok((x, captured))
}
