//! Structural tests of the encoder-decoder forward path.

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use egoav_core::masking::{ChannelChoice, MaskSpec, MaskingConfig, MaskMode, sample_mask_with_mode};
use egoav_core::model::{init_params, BatchInput, ModelConfig, ParamStore, Prediction, SpatialMae};
use egoav_core::tokenizer::mel::MelSpectrogramPair;
use egoav_core::tokenizer::{tokenize_audio, tokenize_video, AudioTokenGrid, VideoTokenGrid};

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        tubelet_depth: 2,
        ..ModelConfig::grad_check(5)
    }
}

fn make_grids(seed: u64, ft: usize, fm: usize) -> (VideoTokenGrid, AudioTokenGrid) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = Array4::from_shape_fn((2, 32, 32, 3), |_| rng.gen::<f32>());
    let video = tokenize_video(&frames).unwrap();
    let pair = MelSpectrogramPair {
        left: Array2::from_shape_fn((ft, fm), |_| rng.gen::<f32>() - 0.5),
        right: Array2::from_shape_fn((ft, fm), |_| rng.gen::<f32>() - 0.5),
    };
    let audio = tokenize_audio(&pair).unwrap();
    (video, audio)
}

fn setup(seed: u64) -> (SpatialMae, ParamStore, VideoTokenGrid, AudioTokenGrid) {
    let cfg = tiny_cfg();
    let store = init_params(&cfg, &Device::Cpu, DType::F32).unwrap();
    let model = SpatialMae::new(cfg).unwrap();
    let (video, audio) = make_grids(seed, 4, 32);
    (model, store, video, audio)
}

#[test]
fn encoder_row_count_is_p_plus_q_minus_s() {
    let (model, store, video, audio) = setup(1);
    let q = audio.total_tokens(); // 8
    let spec = MaskSpec::channel(ChannelChoice::L, audio.per_channel);
    let batch = BatchInput::new(&[(&video, &audio, spec.clone())], &Device::Cpu, DType::F32).unwrap();
    let enc = model.encode(&store, &batch).unwrap();
    let (_, rows, _) = enc.f_av.dims3().unwrap();
    assert_eq!(rows, video.num_tokens() + q - spec.s);
}

#[test]
fn all_audio_masked_still_encodes_and_decodes() {
    let (model, store, video, audio) = setup(2);
    let q = audio.total_tokens();
    let spec = MaskSpec {
        mode: MaskMode::Token,
        masked_indices: (0..q).collect(),
        s: q,
        channel_choice: ChannelChoice::None,
        q,
    };
    let batch = BatchInput::new(&[(&video, &audio, spec)], &Device::Cpu, DType::F32).unwrap();
    let enc = model.encode(&store, &batch).unwrap();
    let (_, rows, _) = enc.f_av.dims3().unwrap();
    assert_eq!(rows, video.num_tokens());
    let pred = model.decode(&store, &enc).unwrap();
    assert_eq!(pred.tokens.dims(), &[1, q, 32]);
}

#[test]
fn masked_token_values_never_reach_the_encoder() {
    let (model, store, video, audio) = setup(3);
    let spec = MaskSpec::channel(ChannelChoice::L, audio.per_channel);
    let mut audio_perturbed = audio.clone();
    for &i in &spec.masked_indices {
        for d in 0..32 {
            audio_perturbed.tokens[(i, d)] += 123.0;
        }
    }
    let b1 = BatchInput::new(&[(&video, &audio, spec.clone())], &Device::Cpu, DType::F32).unwrap();
    let b2 = BatchInput::new(&[(&video, &audio_perturbed, spec)], &Device::Cpu, DType::F32).unwrap();
    let e1: Vec<f32> = model.encode(&store, &b1).unwrap().f_av.flatten_all().unwrap().to_vec1().unwrap();
    let e2: Vec<f32> = model.encode(&store, &b2).unwrap().f_av.flatten_all().unwrap().to_vec1().unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn empty_mask_gives_empty_prediction() {
    let (model, store, video, audio) = setup(4);
    let spec = MaskSpec::empty(audio.total_tokens());
    let batch = BatchInput::new(&[(&video, &audio, spec)], &Device::Cpu, DType::F32).unwrap();
    let enc = model.encode(&store, &batch).unwrap();
    let pred = model.decode(&store, &enc).unwrap();
    assert_eq!(pred.tokens.dims(), &[1, 0, 32]);
}

#[test]
fn predictions_differ_across_masked_positions() {
    let (model, store, video, audio) = setup(5);
    let cfg = MaskingConfig {
        r: 0.0,
        token_ratio: 0.5,
        seed: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let spec = sample_mask_with_mode(&cfg, MaskMode::Token, audio.total_tokens(), audio.per_channel, &mut rng);
    let batch = BatchInput::new(&[(&video, &audio, spec)], &Device::Cpu, DType::F32).unwrap();
    let enc = model.encode(&store, &batch).unwrap();
    let pred = model.decode(&store, &enc).unwrap();
    let rows: Vec<Vec<f32>> = pred.tokens.squeeze(0).unwrap().to_vec2().unwrap();
    assert!(rows.len() >= 2);
    assert_ne!(rows[0], rows[1]);
}

#[test]
fn loss_examples() {
    let model = SpatialMae::new(tiny_cfg()).unwrap();
    let dev = Device::Cpu;

    let t = Tensor::zeros((1, 2, 32), DType::F32, &dev).unwrap();
    let p = Prediction {
        tokens: Tensor::zeros((1, 2, 32), DType::F32, &dev).unwrap(),
    };
    let zero = model.loss(&p, &t).unwrap().to_scalar::<f32>().unwrap();
    assert_eq!(zero, 0.0);

    // targets zero, pred all ones, S=2, D_a=32 -> sum over 32 ones = 32
    let p = Prediction {
        tokens: Tensor::ones((1, 2, 32), DType::F32, &dev).unwrap(),
    };
    let l = model.loss(&p, &t).unwrap().to_scalar::<f32>().unwrap();
    assert!((l - 32.0).abs() < 1e-6);
}

#[test]
fn loss_matches_naive_double_loop() {
    let model = SpatialMae::new(tiny_cfg()).unwrap();
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (b, s, d) = (2, 5, 32);
    let pv: Vec<f32> = (0..b * s * d).map(|_| rng.gen::<f32>()).collect();
    let tv: Vec<f32> = (0..b * s * d).map(|_| rng.gen::<f32>()).collect();
    let pred = Prediction {
        tokens: Tensor::from_vec(pv.clone(), (b, s, d), &dev).unwrap(),
    };
    let targets = Tensor::from_vec(tv.clone(), (b, s, d), &dev).unwrap();
    let got = model.loss(&pred, &targets).unwrap().to_scalar::<f32>().unwrap() as f64;

    let mut acc = 0.0f64;
    for i in 0..b * s {
        for j in 0..d {
            let diff = (pv[i * d + j] - tv[i * d + j]) as f64;
            acc += diff * diff;
        }
    }
    let expect = acc / (b * s) as f64;
    assert!((got - expect).abs() / expect < 1e-6);
}

#[test]
fn zero_masked_tokens_loss_is_an_error() {
    let model = SpatialMae::new(tiny_cfg()).unwrap();
    let dev = Device::Cpu;
    let p = Prediction {
        tokens: Tensor::zeros((1, 0, 32), DType::F32, &dev).unwrap(),
    };
    let t = Tensor::zeros((1, 0, 32), DType::F32, &dev).unwrap();
    assert!(model.loss(&p, &t).is_err());
}

#[test]
fn video_conditioning_reaches_the_prediction() {
    let (model, store, video, audio) = setup(6);
    let spec = MaskSpec::channel(ChannelChoice::R, audio.per_channel);
    let mut video2 = video.clone();
    video2.tokens[(0, 0)] += 1.0;
    let b1 = BatchInput::new(&[(&video, &audio, spec.clone())], &Device::Cpu, DType::F32).unwrap();
    let b2 = BatchInput::new(&[(&video2, &audio, spec)], &Device::Cpu, DType::F32).unwrap();
    let p1: Vec<f32> = {
        let enc = model.encode(&store, &b1).unwrap();
        model.decode(&store, &enc).unwrap().tokens.flatten_all().unwrap().to_vec1().unwrap()
    };
    let p2: Vec<f32> = {
        let enc = model.encode(&store, &b2).unwrap();
        model.decode(&store, &enc).unwrap().tokens.flatten_all().unwrap().to_vec1().unwrap()
    };
    assert_ne!(p1, p2);
}

#[test]
fn permutation_equivariance_with_zeroed_embeddings() {
    let (model, store, video, audio) = setup(7);
    // zero out positional contributions that break equivariance: channel and
    // modality embeddings (positional tables are constants added per row, so
    // we permute coords along with tokens instead)
    for name in [
        "chan_emb.enc.l",
        "chan_emb.enc.r",
        "mod_emb.enc.a",
        "mod_emb.enc.v",
    ] {
        let v = store.get(name).unwrap();
        store.set(name, &v.zeros_like().unwrap()).unwrap();
    }
    let spec = MaskSpec::empty(audio.total_tokens());

    let batch = BatchInput::new(&[(&video, &audio, spec.clone())], &Device::Cpu, DType::F32).unwrap();
    let enc = model.encode(&store, &batch).unwrap();
    let f_a: Vec<Vec<f32>> = enc.f_a().unwrap().squeeze(0).unwrap().to_vec2().unwrap();

    // swap two audio tokens together with their coordinates; with p re-added
    // from the permuted coords and c,m zeroed the transformer core is
    // permutation-equivariant, so outputs swap identically
    let mut audio_perm = audio.clone();
    let q = audio.total_tokens();
    for d in 0..32 {
        let a = audio_perm.tokens[(0, d)];
        audio_perm.tokens[(0, d)] = audio_perm.tokens[(q - 1, d)];
        audio_perm.tokens[(q - 1, d)] = a;
    }
    audio_perm.coords.swap(0, q - 1);
    let batch2 = BatchInput::new(&[(&video, &audio_perm, spec)], &Device::Cpu, DType::F32).unwrap();
    let enc2 = model.encode(&store, &batch2).unwrap();
    let f_a2: Vec<Vec<f32>> = enc2.f_a().unwrap().squeeze(0).unwrap().to_vec2().unwrap();

    let close = |a: &[f32], b: &[f32]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-4);
    assert!(close(&f_a[0], &f_a2[q - 1]));
    assert!(close(&f_a[q - 1], &f_a2[0]));
    for i in 1..q - 1 {
        assert!(close(&f_a[i], &f_a2[i]));
    }
}

#[test]
fn attention_map_shape_and_range() {
    let (model, store, video, audio) = setup(8);
    let spec = MaskSpec::channel(ChannelChoice::L, audio.per_channel);
    let batch = BatchInput::new(&[(&video, &audio, spec)], &Device::Cpu, DType::F32).unwrap();
    let maps = model.attention_maps(&store, &batch, 1).unwrap();
    assert_eq!(maps.len(), 1);
    assert_eq!(maps[0].shape(), &[2, 2]);
    let max = maps[0].iter().cloned().fold(f32::MIN, f32::max);
    assert!(maps[0].iter().all(|&x| (0.0..=1.0).contains(&x)));
    assert!((max - 1.0).abs() < 1e-6);
}

#[test]
fn uniform_attention_gives_constant_map() {
    let (model, store, video, audio) = setup(9);
    // zero qkv of the captured layer -> uniform softmax
    for suffix in ["weight", "bias"] {
        let name = format!("enc_av.0.attn.qkv.{suffix}");
        let v = store.get(&name).unwrap();
        store.set(&name, &v.zeros_like().unwrap()).unwrap();
    }
    let spec = MaskSpec::channel(ChannelChoice::L, audio.per_channel);
    let batch = BatchInput::new(&[(&video, &audio, spec)], &Device::Cpu, DType::F32).unwrap();
    let maps = model.attention_maps(&store, &batch, 0).unwrap();
    let first = maps[0][(0, 0)];
    assert!(maps[0].iter().all(|&x| (x - first).abs() < 1e-5));
}

#[test]
fn invalid_attention_layer_rejected() {
    let (model, store, video, audio) = setup(10);
    let spec = MaskSpec::channel(ChannelChoice::L, audio.per_channel);
    let batch = BatchInput::new(&[(&video, &audio, spec)], &Device::Cpu, DType::F32).unwrap();
    assert!(model.attention_maps(&store, &batch, 99).is_err());
}

/// Central finite differences vs analytic gradients at f64.
#[test]
fn gradients_match_finite_differences() {
    let cfg = tiny_cfg();
    let store = init_params(&cfg, &Device::Cpu, DType::F64).unwrap();
    let model = SpatialMae::new(cfg).unwrap();
    let (video, audio) = make_grids(42, 4, 32);
    let spec = MaskSpec::channel(ChannelChoice::L, audio.per_channel);
    let batch = BatchInput::new(&[(&video, &audio, spec)], &Device::Cpu, DType::F64).unwrap();

    let forward = |store: &egoav_core::model::ParamStore| -> f64 {
        let enc = model.encode(store, &batch).unwrap();
        let pred = model.decode(store, &enc).unwrap();
        model.loss(&pred, &batch.targets).unwrap().to_scalar::<f64>().unwrap()
    };

    let enc = model.encode(&store, &batch).unwrap();
    let pred = model.decode(&store, &enc).unwrap();
    let loss = model.loss(&pred, &batch.targets).unwrap();
    let grads = loss.backward().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let eps = 1e-3;
    // sample a few coordinates from parameters across the network
    for name in [
        "embed.audio.weight",
        "embed.video.weight",
        "enc_v.0.attn.qkv.weight",
        "enc_a.1.mlp.fc1.weight",
        "enc_av.1.attn.proj.weight",
        "chan_emb.enc.l",
        "mask_token",
        "dec.proj.weight",
        "dec_a.0.ln1.weight",
        "head.weight",
        "head.bias",
    ] {
        let var = store.var(name).unwrap();
        let grad = grads
            .get(var)
            .unwrap_or_else(|| panic!("no gradient for {name}"))
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        let base = var.as_tensor().copy().unwrap();
        let flat = base.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let n = flat.len();
        for _ in 0..3 {
            let idx = rng.gen_range(0..n);
            let mut up = flat.clone();
            up[idx] += eps;
            let mut down = flat.clone();
            down[idx] -= eps;
            let shape = base.dims().to_vec();
            store
                .set(name, &Tensor::from_vec(up, shape.as_slice(), &Device::Cpu).unwrap())
                .unwrap();
            let f_up = forward(&store);
            store
                .set(name, &Tensor::from_vec(down, shape.as_slice(), &Device::Cpu).unwrap())
                .unwrap();
            let f_down = forward(&store);
            store.set(name, &base).unwrap();
            let numeric = (f_up - f_down) / (2.0 * eps);
            let analytic = grad[idx];
            let denom = numeric.abs().max(analytic.abs()).max(1e-8);
            let rel = (numeric - analytic).abs() / denom;
            assert!(
                rel < 1e-5,
                "{name}[{idx}]: analytic {analytic} vs numeric {numeric} (rel {rel})"
            );
        }
    }
}
