//! Encoder-decoder forward passes, the masked-token loss, and attention maps.

use candle_core::{DType, Device, Tensor, D};
use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::masking::MaskSpec;
use crate::model::batch::BatchInput;
use crate::model::blocks::{linear, stack};
use crate::model::embed::{audio_pos, video_pos_table};
use crate::model::init::ParamStore;
use crate::model::ModelConfig;

/// Joint features from the shared encoder, video rows first.
pub struct EncoderOutput {
    /// `[B, P + U, enc_dim]`
    pub f_av: Tensor,
    pub p: usize,
    pub u: usize,
    pub specs: Vec<MaskSpec>,
    pub unmasked_coords: Vec<Vec<(usize, usize, usize)>>,
    pub masked_coords: Vec<Vec<(usize, usize, usize)>>,
    pub video_rows: usize,
    pub video_cols: usize,
    pub audio_grid: (usize, usize),
    /// Attention weights `[B, H, N, N]` of the captured shared-encoder layer.
    pub attention: Option<Tensor>,
}

impl EncoderOutput {
    /// Video rows `[B, P, enc_dim]`.
    pub fn f_v(&self) -> Result<Tensor> {
        Ok(self.f_av.narrow(1, 0, self.p)?)
    }

    /// Unmasked-audio rows `[B, U, enc_dim]`.
    pub fn f_a(&self) -> Result<Tensor> {
        Ok(self.f_av.narrow(1, self.p, self.u)?)
    }
}

/// Predicted masked patches `[B, S, D_a]` in masked-index order.
pub struct Prediction {
    pub tokens: Tensor,
}

/// The model: configuration plus forward logic over a [`ParamStore`].
pub struct SpatialMae {
    pub config: ModelConfig,
}

impl SpatialMae {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    fn const_tensor(
        &self,
        data: Vec<f64>,
        shape: (usize, usize, usize),
        device: &Device,
        dtype: DType,
    ) -> Result<Tensor> {
        Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
    }

    /// `[1, P, dim]` sinusoidal table for the tubelet grid.
    fn video_pos(&self, rows: usize, cols: usize, dim: usize, device: &Device, dtype: DType) -> Result<Tensor> {
        let table = video_pos_table(rows, cols, dim)?;
        let flat: Vec<f64> = table.into_iter().flatten().collect();
        self.const_tensor(flat, (1, rows * cols, dim), device, dtype)
    }

    /// `[B, N, dim]` positional embeddings for per-clip audio coordinates.
    fn audio_pos_batch(
        &self,
        coords: &[Vec<(usize, usize, usize)>],
        dim: usize,
        device: &Device,
        dtype: DType,
    ) -> Result<Tensor> {
        let b = coords.len();
        let n = coords.first().map_or(0, |c| c.len());
        let mut flat = Vec::with_capacity(b * n * dim);
        for clip in coords {
            for &(_, t, m) in clip {
                flat.extend(audio_pos(t, m, dim)?);
            }
        }
        self.const_tensor(flat, (b, n, dim), device, dtype)
    }

    /// `[B, N, dim]` channel embeddings selected per token, kept differentiable
    /// through a one-hot matmul against the stacked (c_L, c_R) parameters.
    fn channel_emb_batch(
        &self,
        store: &ParamStore,
        prefix: &str,
        coords: &[Vec<(usize, usize, usize)>],
        device: &Device,
        dtype: DType,
    ) -> Result<Tensor> {
        let b = coords.len();
        let n = coords.first().map_or(0, |c| c.len());
        let mut onehot = Vec::with_capacity(b * n * 2);
        for clip in coords {
            for &(ch, _, _) in clip {
                onehot.push(if ch == 0 { 1.0 } else { 0.0 });
                onehot.push(if ch == 1 { 1.0 } else { 0.0 });
            }
        }
        let sel = self.const_tensor(onehot, (b, n, 2), device, dtype)?;
        let c_l = store.get(&format!("{prefix}.l"))?;
        let c_r = store.get(&format!("{prefix}.r"))?;
        let cs = Tensor::stack(&[c_l, c_r], 0)?; // [2, dim]
        Ok(sel.broadcast_matmul(&cs)?)
    }

    /// Joint encoding of video tokens and unmasked audio tokens.
    pub fn encode(&self, store: &ParamStore, batch: &BatchInput) -> Result<EncoderOutput> {
        self.encode_inner(store, batch, None)
    }

    fn encode_inner(
        &self,
        store: &ParamStore,
        batch: &BatchInput,
        capture_layer: Option<usize>,
    ) -> Result<EncoderOutput> {
        let cfg = &self.config;
        let device = &store.device;
        let dtype = store.dtype;
        let (_, p, dv) = batch.video.dims3()?;
        let (_, u, da) = batch.audio_unmasked.dims3()?;
        if dv != cfg.video_token_dim() {
            return Err(CoreError::ShapeMismatch(format!(
                "video token dim {dv} != config {}",
                cfg.video_token_dim()
            )));
        }
        if u > 0 && da != cfg.audio_token_dim() {
            return Err(CoreError::ShapeMismatch(format!(
                "audio token dim {da} != config {}",
                cfg.audio_token_dim()
            )));
        }

        let v_pos = self.video_pos(batch.video_rows, batch.video_cols, cfg.enc_dim, device, dtype)?;
        let m_v = store.get("mod_emb.enc.v")?;
        let m_a = store.get("mod_emb.enc.a")?;

        // uni-modal branches
        let v = linear(store, "embed.video", &batch.video)?;
        let v = v.broadcast_add(&v_pos)?;
        let (e_v, _) = stack(store, "enc_v", &v, cfg.enc_layers_uni, cfg.enc_heads, None)?;

        let audio_parts = if u > 0 {
            let a_pos = self.audio_pos_batch(&batch.unmasked_coords, cfg.enc_dim, device, dtype)?;
            let c_emb = self.channel_emb_batch(store, "chan_emb.enc", &batch.unmasked_coords, device, dtype)?;
            let a = linear(store, "embed.audio", &batch.audio_unmasked)?;
            let a = a.broadcast_add(&a_pos)?.add(&c_emb)?;
            let (e_a, _) = stack(store, "enc_a", &a, cfg.enc_layers_uni, cfg.enc_heads, None)?;
            Some((e_a, a_pos, c_emb))
        } else {
            None
        };

        // shared encoder: concat, re-add positional/channel, add modality
        let v2 = e_v.broadcast_add(&v_pos)?.broadcast_add(&m_v)?;
        let x = match &audio_parts {
            Some((e_a, a_pos, c_emb)) => {
                let a2 = e_a.add(a_pos)?.add(c_emb)?.broadcast_add(&m_a)?;
                Tensor::cat(&[&v2, &a2], 1)?
            }
            None => v2,
        };
        let (f_av, attention) = stack(store, "enc_av", &x, cfg.enc_layers_shared, cfg.enc_heads, capture_layer)?;

        Ok(EncoderOutput {
            f_av,
            p,
            u,
            specs: batch.specs.clone(),
            unmasked_coords: batch.unmasked_coords.clone(),
            masked_coords: batch.masked_coords.clone(),
            video_rows: batch.video_rows,
            video_cols: batch.video_cols,
            audio_grid: batch.audio_grid,
            attention,
        })
    }

    /// Predict the masked audio patches from the joint encoding.
    pub fn decode(&self, store: &ParamStore, enc: &EncoderOutput) -> Result<Prediction> {
        let cfg = &self.config;
        let device = &store.device;
        let dtype = store.dtype;
        let (b, _, _) = enc.f_av.dims3()?;
        let (p, u) = (enc.p, enc.u);
        let s = enc.specs.first().map_or(0, |sp| sp.s);
        if enc.specs.is_empty() {
            return Err(CoreError::ShapeMismatch("missing mask specs".into()));
        }

        let g = linear(store, "dec.proj", &enc.f_av)?;

        let v_pos = self.video_pos(enc.video_rows, enc.video_cols, cfg.dec_dim, device, dtype)?;
        let m_v = store.get("mod_emb.dec.v")?;
        let m_a = store.get("mod_emb.dec.a")?;

        let g_v = g.narrow(1, 0, p)?.broadcast_add(&v_pos)?.broadcast_add(&m_v)?;

        let mut parts: Vec<Tensor> = vec![g_v];
        let mut a_pos_u = None;
        let mut c_emb_u = None;
        if u > 0 {
            let a_pos = self.audio_pos_batch(&enc.unmasked_coords, cfg.dec_dim, device, dtype)?;
            let c_emb = self.channel_emb_batch(store, "chan_emb.dec", &enc.unmasked_coords, device, dtype)?;
            let g_a = g.narrow(1, p, u)?.add(&a_pos)?.add(&c_emb)?.broadcast_add(&m_a)?;
            parts.push(g_a);
            a_pos_u = Some(a_pos);
            c_emb_u = Some(c_emb);
        }
        let mut a_pos_m = None;
        let mut c_emb_m = None;
        if s > 0 {
            let phi = store.get("mask_token")?.reshape((1, 1, cfg.dec_dim))?;
            let phi = phi.broadcast_as((b, s, cfg.dec_dim))?;
            let a_pos = self.audio_pos_batch(&enc.masked_coords, cfg.dec_dim, device, dtype)?;
            let c_emb = self.channel_emb_batch(store, "chan_emb.dec", &enc.masked_coords, device, dtype)?;
            let g_m = phi.add(&a_pos)?.add(&c_emb)?.broadcast_add(&m_a)?;
            parts.push(g_m);
            a_pos_m = Some(a_pos);
            c_emb_m = Some(c_emb);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let x = Tensor::cat(&refs, 1)?;

        let (h, _) = stack(store, "dec_av", &x, cfg.dec_layers_shared, cfg.dec_heads, None)?;

        // audio decoder sees only audio rows, with positions and channels re-added
        let h_a = h.narrow(1, p, u + s)?;
        let h_a = match (&a_pos_u, &a_pos_m) {
            (Some(pu), Some(pm)) => {
                let pos = Tensor::cat(&[pu, pm], 1)?;
                let chan = Tensor::cat(&[c_emb_u.as_ref().unwrap(), c_emb_m.as_ref().unwrap()], 1)?;
                h_a.add(&pos)?.add(&chan)?
            }
            (Some(pu), None) => h_a.add(pu)?.add(c_emb_u.as_ref().unwrap())?,
            (None, Some(pm)) => h_a.add(pm)?.add(c_emb_m.as_ref().unwrap())?,
            (None, None) => h_a,
        };
        let (d_a, _) = stack(store, "dec_a", &h_a, cfg.dec_layers_audio, cfg.dec_heads, None)?;

        if s == 0 {
            let empty = Tensor::zeros((b, 0, cfg.audio_token_dim()), dtype, device)?;
            return Ok(Prediction { tokens: empty });
        }
        let masked_rows = d_a.narrow(1, u, s)?;
        let tokens = linear(store, "head", &masked_rows)?;
        Ok(Prediction { tokens })
    }

    /// Masked-token mean-squared error. The inner norm sums over a patch's
    /// values; `per_element_loss` switches to a per-element mean instead.
    pub fn loss(&self, pred: &Prediction, targets: &Tensor) -> Result<Tensor> {
        let (_, s, _) = targets.dims3()?;
        if s == 0 {
            return Err(CoreError::NoMaskedTokens);
        }
        if pred.tokens.dims() != targets.dims() {
            return Err(CoreError::ShapeMismatch(format!(
                "prediction {:?} vs targets {:?}",
                pred.tokens.dims(),
                targets.dims()
            )));
        }
        let targets = if self.config.patch_norm_targets {
            let mean = targets.mean_keepdim(D::Minus1)?;
            let centered = targets.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
            centered.broadcast_div(&(var + 1e-6)?.sqrt()?)?
        } else {
            targets.clone()
        };
        let sq = (pred.tokens.clone() - targets)?.sqr()?;
        let loss = if self.config.per_element_loss {
            sq.mean_all()?
        } else {
            sq.sum(D::Minus1)?.mean_all()?
        };
        Ok(loss)
    }

    /// Mean-over-heads attention from audio queries to video keys in shared
    /// encoder layer `layer_idx`, summed over queries and normalized to [0,1].
    /// One `rows x cols` grid per clip.
    pub fn attention_maps(
        &self,
        store: &ParamStore,
        batch: &BatchInput,
        layer_idx: usize,
    ) -> Result<Vec<Array2<f32>>> {
        if layer_idx >= self.config.enc_layers_shared {
            return Err(CoreError::InvalidLayer {
                idx: layer_idx,
                layers: self.config.enc_layers_shared,
            });
        }
        let enc = self.encode_inner(store, batch, Some(layer_idx))?;
        if enc.u == 0 {
            return Err(CoreError::ShapeMismatch(
                "attention map undefined without audio queries".into(),
            ));
        }
        let attn = enc.attention.as_ref().expect("captured weights");
        let (b, _h, _n, _) = attn.dims4()?;
        let mean_heads = attn.mean(1)?; // [B, N, N]
        let audio_to_video = mean_heads
            .narrow(1, enc.p, enc.u)?
            .narrow(2, 0, enc.p)?
            .sum(1)?; // [B, P]
        let host: Vec<Vec<f32>> = audio_to_video.to_dtype(DType::F32)?.to_vec2()?;
        let mut maps = Vec::with_capacity(b);
        for clip in host {
            let max = clip.iter().cloned().fold(f32::MIN, f32::max);
            let scale = if max > 0.0 { 1.0 / max } else { 1.0 };
            let map = Array2::from_shape_vec(
                (enc.video_rows, enc.video_cols),
                clip.iter().map(|&x| x * scale).collect(),
            )
            .map_err(|e| CoreError::ShapeMismatch(e.to_string()))?;
            maps.push(map);
        }
        Ok(maps)
    }
}
