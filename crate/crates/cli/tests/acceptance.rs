//! Acceptance suite: one test per criterion (AC-1..AC-10), each printing a
//! single PASS/FAIL line. Run with `--nocapture` to see the lines live:
//!
//! ```text
//! cargo test -p egoav-cli --test acceptance -- --nocapture
//! ```
//!
//! The heavy criteria (AC-4..AC-7) train tiny models on synthetic corpora and
//! take tens of minutes each on a single CPU core.

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use egoav_core::asd::map::average_precision;
use egoav_core::asd::{
    evaluate_map, finetune_asd, tracks_from_labels, AsdConfig, AsdPrediction, AsdSample,
};
use egoav_core::checkpoint::Checkpoint;
use egoav_core::denoise::train::{apply_mask, ideal_ratio_mask};
use egoav_core::denoise::{
    istft, mix_at_snr, si_sdr, si_sdri, stft, train_denoiser, DenoiseTrainConfig, UNetConfig,
    VisionMode,
};
use egoav_core::masking::{
    sample_batch_mode, sample_mask_with_mode, MaskMode, MaskingConfig,
};
use egoav_core::model::{init_params, BatchInput, ModelConfig, ParamStore, Prediction, SpatialMae};
use egoav_core::pretrain::{
    evaluate_inpainting, prepare_clips, train, PreparedClip, TrainConfig, TrainOptions,
};
use egoav_core::scenes::{generate_corpus, load_clip, CorpusConfig};
use egoav_core::tokenizer::{
    compute_mel_pair, compute_norm_stats, tokenize_audio, tokenize_video, NormalizationStats,
};
use egoav_core::RawClip;

/// One acceptance criterion: collects sub-checks, prints exactly one
/// PASS/FAIL line, and panics on the first failed sub-check.
struct Criterion {
    name: &'static str,
    started: Instant,
}

impl Criterion {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            started: Instant::now(),
        }
    }

    fn check(&self, ok: bool, detail: &str) {
        if !ok {
            println!("{}: FAIL — {detail}", self.name);
            panic!("{} failed: {detail}", self.name);
        }
    }

    fn pass(self, detail: &str) {
        println!(
            "{}: PASS ({detail}; {:.1}s)",
            self.name,
            self.started.elapsed().as_secs_f64()
        );
    }
}

/// Deterministic random clip (frames in [0,1], waveform in [-0.5, 0.5]).
fn random_clip(seed: u64, height: usize, width: usize) -> RawClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = Array4::from_shape_fn((5, height, width, 3), |_| rng.gen_range(0.0f32..1.0));
    let waveform = Array2::from_shape_fn((2, 16_000), |_| rng.gen_range(-0.5f32..0.5));
    RawClip::new(frames, waveform, format!("rand{seed}"), "synthetic", 0.0).unwrap()
}

// ---------------------------------------------------------------------------
// AC-1: token-count constants
// ---------------------------------------------------------------------------

#[test]
fn ac01_token_constants() {
    let ac = Criterion::new("AC-1 token constants");

    let grid = tokenize_video(&Array4::<f32>::zeros((5, 240, 352, 3))).unwrap();
    ac.check(
        grid.num_tokens() == 330,
        &format!("240x352 clip gave {} video tokens, want 330", grid.num_tokens()),
    );
    let grid = tokenize_video(&Array4::<f32>::zeros((5, 198, 352, 3))).unwrap();
    ac.check(
        grid.num_tokens() == 286,
        &format!("198x352 clip gave {} video tokens, want 286", grid.num_tokens()),
    );

    let wave = Array2::<f32>::zeros((2, 16_000));
    let pair = compute_mel_pair(&wave, &NormalizationStats::identity("ac1")).unwrap();
    ac.check(
        pair.num_windows() == 98 && pair.num_mel_bins() == 128,
        &format!(
            "1 s audio gave a {}x{} Mel grid, want 98x128",
            pair.num_windows(),
            pair.num_mel_bins()
        ),
    );
    let audio = tokenize_audio(&pair).unwrap();
    ac.check(
        audio.per_channel == 392 && audio.total_tokens() == 784,
        &format!(
            "audio tokens per channel {} / total {}, want 392 / 784",
            audio.per_channel,
            audio.total_tokens()
        ),
    );

    ac.pass("330 + 286 video tokens, 98x128 Mel, 392 audio tokens per channel");
}

// ---------------------------------------------------------------------------
// AC-2: masking statistics
// ---------------------------------------------------------------------------

#[test]
fn ac02_masking_statistics() {
    let ac = Criterion::new("AC-2 masking statistics");
    let config = MaskingConfig::default();
    assert!((config.r - 0.2).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws = 10_000usize;
    let channel = (0..draws)
        .filter(|_| sample_batch_mode(&config, &mut rng) == MaskMode::Channel)
        .count();
    let frac = channel as f64 / draws as f64;
    ac.check(
        (0.18..=0.22).contains(&frac),
        &format!("channel-mode fraction {frac:.4} outside [0.18, 0.22]"),
    );

    let left: Vec<usize> = (0..392).collect();
    let right: Vec<usize> = (392..784).collect();
    for _ in 0..1_000 {
        let spec = sample_mask_with_mode(&config, MaskMode::Channel, 784, 392, &mut rng);
        ac.check(
            spec.s == 392 && spec.masked_indices.len() == 392,
            &format!("channel mask has S = {}, want 392", spec.s),
        );
        ac.check(
            spec.masked_indices == left || spec.masked_indices == right,
            "channel mask is not a contiguous channel half",
        );
    }

    ac.pass(&format!(
        "channel fraction {frac:.4} over {draws} draws; 1000 channel masks all S=392"
    ));
}

// ---------------------------------------------------------------------------
// AC-3: masked-autoencoder structure and gradients
// ---------------------------------------------------------------------------

#[test]
fn ac03_mae_structure_and_gradients() {
    let ac = Criterion::new("AC-3 MAE structure/gradients");
    let device = Device::Cpu;

    // (a) the encoder never sees masked tokens: perturbing their values
    // cannot change its output.
    let clip = random_clip(31, 48, 64);
    let stats = compute_norm_stats(std::slice::from_ref(&clip), "ac3").unwrap();
    let prepared = PreparedClip::new(&clip, &stats).unwrap();
    let (video, audio) = prepared.grids(false).unwrap();
    let masking = MaskingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = sample_mask_with_mode(
        &masking,
        MaskMode::Token,
        audio.total_tokens(),
        audio.per_channel,
        &mut rng,
    );

    let config = ModelConfig::tiny(33);
    let store = init_params(&config, &device, DType::F32).unwrap();
    let mae = SpatialMae::new(config).unwrap();

    let batch =
        BatchInput::new(&[(&video, &audio, spec.clone())], &device, DType::F32).unwrap();
    let mut perturbed = audio.clone();
    for &idx in &spec.masked_indices {
        for v in perturbed.tokens.row_mut(idx) {
            *v += 7.0;
        }
    }
    let batch_perturbed =
        BatchInput::new(&[(&video, &perturbed, spec.clone())], &device, DType::F32).unwrap();
    let f1: Vec<f32> = mae
        .encode(&store, &batch)
        .unwrap()
        .f_av
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    let f2: Vec<f32> = mae
        .encode(&store, &batch_perturbed)
        .unwrap()
        .f_av
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    ac.check(
        f1 == f2,
        "encoder output changed when masked token values were perturbed",
    );

    // (b) the loss gradient w.r.t. predictions exists only at masked
    // positions: a full-grid prediction variable gets exactly-zero gradient
    // rows everywhere outside the mask.
    let batch64 =
        BatchInput::new(&[(&video, &audio, spec.clone())], &device, DType::F64).unwrap();
    let q = audio.total_tokens();
    let da = audio.tokens.shape()[1];
    let full_data: Vec<f64> = audio.tokens.iter().map(|&x| x as f64 + 0.1).collect();
    let full = Var::from_tensor(
        &Tensor::from_vec(full_data, (1, q, da), &device).unwrap(),
    )
    .unwrap();
    let idx = Tensor::from_vec(
        spec.masked_indices.iter().map(|&i| i as u32).collect::<Vec<u32>>(),
        (spec.s,),
        &device,
    )
    .unwrap();
    let pred = Prediction {
        tokens: full.as_tensor().index_select(&idx, 1).unwrap(),
    };
    let loss = mae.loss(&pred, &batch64.targets).unwrap();
    let grads = loss.backward().unwrap();
    let grad: Vec<f64> = grads
        .get(&full)
        .expect("full-grid variable has a gradient")
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    let masked: std::collections::HashSet<usize> = spec.masked_indices.iter().copied().collect();
    let mut masked_energy = 0.0f64;
    for (row, chunk) in grad.chunks(da).enumerate() {
        let energy: f64 = chunk.iter().map(|g| g.abs()).sum();
        if masked.contains(&row) {
            masked_energy += energy;
        } else {
            ac.check(
                energy == 0.0,
                &format!("unmasked row {row} has nonzero gradient energy {energy}"),
            );
        }
    }
    ac.check(masked_energy > 0.0, "no gradient at any masked position");

    // (c) analytic vs central-difference gradients at float64 on the minimal
    // configuration, end to end through encode -> decode -> loss.
    let clip = random_clip(35, 32, 32);
    let stats = compute_norm_stats(std::slice::from_ref(&clip), "ac3c").unwrap();
    let prepared = PreparedClip::new(&clip, &stats).unwrap();
    let (video, audio) = prepared.grids(false).unwrap();
    let spec = sample_mask_with_mode(
        &masking,
        MaskMode::Token,
        audio.total_tokens(),
        audio.per_channel,
        &mut rng,
    );
    let config = ModelConfig::grad_check(37);
    let store = init_params(&config, &device, DType::F64).unwrap();
    let mae = SpatialMae::new(config).unwrap();
    let batch = BatchInput::new(&[(&video, &audio, spec)], &device, DType::F64).unwrap();

    let forward = |store: &ParamStore| -> f64 {
        let enc = mae.encode(store, &batch).unwrap();
        let pred = mae.decode(store, &enc).unwrap();
        mae.loss(&pred, &batch.targets)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
    };

    let enc = mae.encode(&store, &batch).unwrap();
    let pred = mae.decode(&store, &enc).unwrap();
    let loss = mae.loss(&pred, &batch.targets).unwrap();
    let grads = loss.backward().unwrap();

    let names = store.names();
    let chosen: Vec<&String> = ["embed.audio.weight", "head.weight"]
        .iter()
        .map(|want| names.iter().find(|n| n.as_str() == *want).unwrap())
        .chain(names.iter().find(|n| n.contains("attn.qkv.weight")))
        .collect();
    let eps = 1e-4;
    let mut worst = 0.0f64;
    for name in chosen {
        let var = store.var(name).unwrap();
        let analytic: Vec<f64> = grads
            .get(var)
            .expect("parameter has a gradient")
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        // probe the element with the largest gradient magnitude so the
        // finite difference is well conditioned
        let (idx, &g) = analytic
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        let dims = var.as_tensor().dims().to_vec();
        let mut vals: Vec<f64> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let orig = vals[idx];

        vals[idx] = orig + eps;
        var.set(&Tensor::from_vec(vals.clone(), dims.clone(), &device).unwrap())
            .unwrap();
        let plus = forward(&store);
        vals[idx] = orig - eps;
        var.set(&Tensor::from_vec(vals.clone(), dims.clone(), &device).unwrap())
            .unwrap();
        let minus = forward(&store);
        vals[idx] = orig;
        var.set(&Tensor::from_vec(vals, dims, &device).unwrap()).unwrap();

        let fd = (plus - minus) / (2.0 * eps);
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-12);
        worst = worst.max(rel);
        ac.check(
            rel < 1e-5,
            &format!("{name}: analytic {g:.3e} vs finite-difference {fd:.3e} (rel {rel:.3e})"),
        );
    }

    ac.pass(&format!(
        "encoder invariant to masked values; gradients confined to the mask; worst grad-check rel err {worst:.2e}"
    ));
}

// ---------------------------------------------------------------------------
// AC-4: overfit smoke test
// ---------------------------------------------------------------------------

#[test]
fn ac04_overfit_smoke() {
    let ac = Criterion::new("AC-4 overfit smoke");
    let dir = tempfile::tempdir().unwrap();
    let corpus = CorpusConfig {
        n_scenes: 8,
        duration_s: 1,
        height: 48,
        width: 64,
        dataset: "ac4".into(),
        seed: 104,
        ..Default::default()
    };
    let manifest = generate_corpus(&corpus, dir.path()).unwrap();
    let clips: Vec<RawClip> = manifest
        .records
        .iter()
        .map(|r| load_clip(&manifest.root, r).unwrap().0)
        .collect();
    assert_eq!(clips.len(), 8);
    let stats = compute_norm_stats(&clips, "ac4").unwrap();

    // one full-batch step per epoch; the cosine schedule anneals to zero
    // exactly at the step budget so the tail of the run converges hard
    let config = TrainConfig {
        epochs: 300,
        batch_size: 8,
        peak_lr: 6e-3,
        warmup_epochs: 3,
        augment_flip_prob: 0.0,
        seed: 104,
        ..Default::default()
    };
    let options = TrainOptions {
        max_steps: Some(300),
        ..Default::default()
    };
    let report = train(&clips, &[], &stats, &ModelConfig::tiny(104), &config, &options).unwrap();

    let first = report.metrics.first().unwrap().loss;
    let last = report.metrics.last().unwrap().loss;
    ac.check(
        last < 0.05 * first,
        &format!(
            "loss {first:.2} -> {last:.2} after {} steps; need < {:.2}",
            report.metrics.len(),
            0.05 * first
        ),
    );
    ac.pass(&format!(
        "loss {first:.2} -> {last:.3} over {} steps ({:.1}% of initial)",
        report.metrics.len(),
        100.0 * last / first
    ));
}

// ---------------------------------------------------------------------------
// AC-5: spatial-correspondence probe
// ---------------------------------------------------------------------------

#[test]
fn ac05_spatial_correspondence_probe() {
    let ac = Criterion::new("AC-5 spatial correspondence");
    let dir = tempfile::tempdir().unwrap();
    let corpus = CorpusConfig {
        n_scenes: 160,
        duration_s: 4,
        height: 48,
        width: 64,
        speakers_min: 1,
        speakers_max: 1,
        visual_activity_cue: true,
        ambient_level: 0.01,
        camera_pan_max: 0.0,
        dataset: "ac5".into(),
        seed: 105,
    };
    let manifest = generate_corpus(&corpus, dir.path()).unwrap();
    let load = |records: Vec<&egoav_core::scenes::ManifestRecord>| -> Vec<RawClip> {
        records
            .iter()
            .map(|r| load_clip(&manifest.root, r).unwrap().0)
            .collect()
    };
    let train_clips = load(manifest.split("train"));
    let mut held_out: Vec<&egoav_core::scenes::ManifestRecord> = manifest.split("val");
    held_out.extend(manifest.split("test"));
    held_out.truncate(100);
    let eval_clips = load(held_out);
    assert!(train_clips.len() >= 500, "train set has {}", train_clips.len());
    assert_eq!(eval_clips.len(), 100);

    let stats = compute_norm_stats(&train_clips, "ac5").unwrap();
    let masking = MaskingConfig {
        r: 1.0,
        token_ratio: 0.5,
        seed: 105,
    };
    let config = TrainConfig {
        epochs: 3,
        batch_size: 8,
        peak_lr: 1e-3,
        warmup_epochs: 1,
        masking: masking.clone(),
        augment_flip_prob: 0.5,
        seed: 105,
        ..Default::default()
    };
    let report = train(
        &train_clips,
        &[],
        &stats,
        &ModelConfig::tiny(105),
        &config,
        &TrainOptions::default(),
    )
    .unwrap();

    let store = report
        .checkpoint
        .build_store(&Device::Cpu, DType::F32)
        .unwrap();
    let mae = SpatialMae::new(report.checkpoint.config.clone()).unwrap();
    let prepared = prepare_clips(&eval_clips, &stats).unwrap();
    let inpaint =
        evaluate_inpainting(&mae, &store, &prepared, MaskMode::Channel, &masking, 1055).unwrap();

    let n = inpaint.true_video.len();
    let gaps: Vec<f64> = (0..n)
        .map(|i| inpaint.shuffled_video[i] - inpaint.true_video[i])
        .collect();
    let wins = gaps.iter().filter(|&&g| g > 0.0).count();
    let mean = gaps.iter().sum::<f64>() / n as f64;
    let sd = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let t = mean / (sd / (n as f64).sqrt());
    let (m_true, _, m_shuf) = inpaint.means();

    ac.check(
        wins * 100 >= 80 * n,
        &format!("true video beat shuffled on only {wins}/{n} clips (need >= 80%)"),
    );
    // one-sided paired t-test at p < 0.01, 99 degrees of freedom
    ac.check(
        t > 2.365,
        &format!("paired t = {t:.2} (mean gap {mean:.4}) below the p<0.01 threshold 2.365"),
    );
    ac.pass(&format!(
        "wins {wins}/{n}, mean inpainting loss true {m_true:.3} vs shuffled {m_shuf:.3}, paired t = {t:.1}"
    ));
}

// ---------------------------------------------------------------------------
// AC-6: active speaker detection end to end
// ---------------------------------------------------------------------------

#[test]
fn ac06_asd_end_to_end() {
    let ac = Criterion::new("AC-6 ASD end-to-end");
    let dir = tempfile::tempdir().unwrap();
    let corpus = CorpusConfig {
        n_scenes: 40,
        duration_s: 3,
        height: 48,
        width: 64,
        speakers_min: 2,
        speakers_max: 2,
        visual_activity_cue: false,
        ambient_level: 0.01,
        camera_pan_max: 0.0,
        dataset: "ac6".into(),
        seed: 106,
    };
    let manifest = generate_corpus(&corpus, dir.path()).unwrap();
    let samples = |split: &str| -> Vec<AsdSample> {
        manifest
            .split(split)
            .iter()
            .map(|r| {
                let (clip, labels) = load_clip(&manifest.root, r).unwrap();
                let tracks = tracks_from_labels(&clip, &labels).unwrap();
                AsdSample { clip, tracks }
            })
            .collect()
    };
    let train_samples = samples("train");
    let test_samples = samples("test");
    assert!(!test_samples.is_empty());

    let train_clips: Vec<RawClip> = train_samples.iter().map(|s| s.clip.clone()).collect();
    let stats = compute_norm_stats(&train_clips, "ac6").unwrap();

    // pretrain the backbone with channel masking on the train scenes
    let masking = MaskingConfig {
        r: 1.0,
        token_ratio: 0.5,
        seed: 106,
    };
    let pretrain_config = TrainConfig {
        epochs: 3,
        batch_size: 8,
        peak_lr: 1e-3,
        warmup_epochs: 1,
        masking,
        augment_flip_prob: 0.5,
        seed: 106,
        ..Default::default()
    };
    let report = train(
        &train_clips,
        &[],
        &stats,
        &ModelConfig::tiny(106),
        &pretrain_config,
        &TrainOptions::default(),
    )
    .unwrap();
    let pretrained = report.checkpoint;

    let scratch_store = init_params(&ModelConfig::tiny(206), &Device::Cpu, DType::F32).unwrap();
    let scratch = Checkpoint::from_store(&ModelConfig::tiny(206), &scratch_store, &stats);

    let finetune_config = AsdConfig {
        epochs: 2,
        head_lr: 1e-3,
        backbone_lr: 1e-4,
        seed: 106,
        max_steps: Some(120),
        ..Default::default()
    };
    let run = |checkpoint: &Checkpoint| -> f64 {
        let (model, _) = finetune_asd(&train_samples, checkpoint, &finetune_config).unwrap();
        let mut predictions: Vec<AsdPrediction> = Vec::new();
        for sample in &test_samples {
            predictions.extend(model.score_sample(sample).unwrap());
        }
        evaluate_map(&predictions).unwrap()
    };
    let map_pretrained = run(&pretrained);
    let map_scratch = run(&scratch);

    // label-prevalence baseline: a constant score earns AP = positive rate
    let mut positives = 0usize;
    let mut total = 0usize;
    for sample in &test_samples {
        for track in &sample.tracks {
            positives += track.labels.iter().filter(|&&l| l).count();
            total += track.labels.len();
        }
    }
    let prevalence = positives as f64 / total as f64;

    ac.check(
        map_pretrained >= map_scratch + 0.03,
        &format!(
            "pretrained mAP {map_pretrained:.3} vs scratch {map_scratch:.3}: gap below 3 points"
        ),
    );
    ac.check(
        map_pretrained > prevalence && map_scratch > prevalence,
        &format!(
            "mAP (pretrained {map_pretrained:.3}, scratch {map_scratch:.3}) not above prevalence {prevalence:.3}"
        ),
    );
    ac.pass(&format!(
        "pretrained mAP {map_pretrained:.3} vs scratch {map_scratch:.3} (prevalence {prevalence:.3})"
    ));
}

// ---------------------------------------------------------------------------
// AC-7: denoising metrics, oracle, and trained model
// ---------------------------------------------------------------------------

/// Amplitude-modulated two-tone clip; fades in/out so STFT edge effects are
/// negligible in round-trip comparisons.
fn tone_wave(freqs: [f64; 2], n: usize) -> Array2<f32> {
    let mut w = Array2::zeros((2, n));
    let fade = 256usize;
    for ch in 0..2 {
        for i in 0..n {
            let t = i as f64 / 16_000.0;
            let am = 0.6 + 0.4 * (2.0 * std::f64::consts::PI * 4.0 * t).sin();
            let mut v = 0.4 * am * (2.0 * std::f64::consts::PI * freqs[ch] * t).sin();
            let edge = (i.min(n - 1 - i) as f64 / fade as f64).min(1.0);
            v *= edge;
            w[(ch, i)] = v as f32;
        }
    }
    w
}

fn tone_clip(freqs: [f64; 2], id: &str) -> RawClip {
    let frames = Array4::from_elem((5, 32, 32, 3), 0.5f32);
    RawClip::new(frames, tone_wave(freqs, 16_000), id, "tones", 0.0).unwrap()
}

fn noise_wave(seed: u64, n: usize) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((2, n), |_| 0.3 * (rng.gen::<f32>() * 2.0 - 1.0))
}

#[test]
fn ac07_denoising() {
    let ac = Criterion::new("AC-7 denoising");

    // exactness: estimating the mixture with itself improves nothing
    let reference = tone_wave([440.0, 550.0], 16_000);
    let mixed = mix_at_snr(&reference, &noise_wave(70, 16_000), 0.0).unwrap();
    let zero = si_sdri(&mixed.target, &mixed.mixed, &mixed.mixed).unwrap();
    ac.check(zero == 0.0, &format!("si_sdri(mixture) = {zero}, want exactly 0"));

    // scale invariance of SI-SDR
    let a = si_sdr(&reference, &mixed.mixed).unwrap();
    let b = si_sdr(&reference, &mixed.mixed.mapv(|x| 3.7 * x)).unwrap();
    ac.check(
        (a - b).abs() < 1e-9,
        &format!("SI-SDR moved by {:.3e} dB under scaling", (a - b).abs()),
    );

    // istft(stft(x)) round trip
    let spec = stft(&reference).unwrap();
    let back = istft(&spec, 16_000).unwrap();
    let num: f64 = reference
        .iter()
        .zip(back.iter())
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum();
    let den: f64 = reference.iter().map(|&x| (x as f64).powi(2)).sum();
    let rel = (num / den).sqrt();
    ac.check(
        rel < 1e-4,
        &format!("STFT round-trip relative error {rel:.2e} >= 1e-4"),
    );

    // oracle ideal ratio mask at 0 dB
    let irm = ideal_ratio_mask(&mixed).unwrap();
    let est = istft(
        &apply_mask(&stft(&mixed.mixed).unwrap(), &irm).unwrap(),
        16_000,
    )
    .unwrap();
    let irm_gain = si_sdri(&mixed.target, &est, &mixed.mixed).unwrap();
    ac.check(
        irm_gain > 5.0,
        &format!("oracle IRM SI-SDRi {irm_gain:.2} dB, need > 5"),
    );

    // trained tiny U-Net beats the mixture at 0 dB on held-out tones
    let targets: Vec<RawClip> = (0..8)
        .map(|i| {
            tone_clip(
                [300.0 + 85.0 * i as f64, 420.0 + 65.0 * i as f64],
                &format!("t{i}"),
            )
        })
        .collect();
    let noises: Vec<RawClip> = (0..8)
        .map(|i| {
            let frames = Array4::from_elem((5, 32, 32, 3), 0.2f32);
            RawClip::new(frames, noise_wave(700 + i, 16_000), format!("n{i}"), "tones", 0.0)
                .unwrap()
        })
        .collect();
    let config = DenoiseTrainConfig {
        epochs: 10_000,
        batch_size: 4,
        lr: 3e-3,
        snr_levels: vec![0.0],
        vision: VisionMode::None,
        unet: UNetConfig::tiny(107),
        seed: 107,
        max_steps: Some(120),
        ..Default::default()
    };
    let (model, _) = train_denoiser(&targets, &noises, None, &config).unwrap();

    let mut gains = Vec::new();
    for i in 0..4 {
        let target = tone_wave([340.0 + 95.0 * i as f64, 460.0 + 75.0 * i as f64], 16_000);
        let mix = mix_at_snr(&target, &noise_wave(900 + i as u64, 16_000), 0.0).unwrap();
        let est = model.denoise(&mix.mixed, None).unwrap();
        gains.push(si_sdri(&mix.target, &est, &mix.mixed).unwrap());
    }
    let mean_gain = gains.iter().sum::<f64>() / gains.len() as f64;
    ac.check(
        mean_gain > 0.0,
        &format!("trained U-Net SI-SDRi {mean_gain:.2} dB at 0 dB, need > 0"),
    );

    ac.pass(&format!(
        "round trip {rel:.1e}, oracle IRM {irm_gain:.1} dB, trained U-Net {mean_gain:.2} dB"
    ));
}

// ---------------------------------------------------------------------------
// AC-8: mAP equivalence against a brute-force oracle
// ---------------------------------------------------------------------------

/// AP assuming all scores are distinct: mean over positives of the precision
/// at each positive's rank.
fn brute_force_ap(pairs: &[(f64, bool)]) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = sorted.iter().filter(|(_, l)| *l).count();
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, (_, label)) in sorted.iter().enumerate() {
        if *label {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    sum / total_pos as f64
}

#[test]
fn ac08_map_equivalence() {
    let ac = Criterion::new("AC-8 mAP equivalence");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..1_000 {
        let n = rng.gen_range(1..=200usize);
        let mut pairs: Vec<(f64, bool)> = (0..n)
            .map(|_| (rng.gen::<f64>(), rng.gen::<f64>() < 0.3))
            .collect();
        if !pairs.iter().any(|(_, l)| *l) {
            let k = rng.gen_range(0..n);
            pairs[k].1 = true;
        }
        let fast = average_precision(&pairs).unwrap();
        let slow = brute_force_ap(&pairs);
        let diff = (fast - slow).abs();
        worst = worst.max(diff);
        ac.check(
            diff < 1e-9,
            &format!("AP mismatch {diff:.3e} on an instance with n = {n}"),
        );
    }

    let hand = average_precision(&[(0.9, true), (0.8, false), (0.7, true)]).unwrap();
    ac.check(
        (hand - 5.0 / 6.0).abs() < 1e-12,
        &format!("hand-checked ranking gave AP {hand:.6}, want 0.833333"),
    );
    ac.pass(&format!(
        "1000 random instances match to {worst:.1e}; hand case {hand:.6}"
    ));
}

// ---------------------------------------------------------------------------
// AC-9: SNR mixing exactness
// ---------------------------------------------------------------------------

#[test]
fn ac09_mixing_exactness() {
    let ac = Criterion::new("AC-9 mixing exactness");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let target = Array2::from_shape_fn((2, 16_000), |_| rng.gen_range(-0.5f32..0.5));
        let noise = Array2::from_shape_fn((2, 16_000), |_| rng.gen_range(-0.5f32..0.5));
        for &snr in &[0.0, 2.5, 5.0] {
            let mixture = mix_at_snr(&target, &noise, snr).unwrap();
            let err = (mixture.measured_snr_db() - snr).abs();
            worst = worst.max(err);
            ac.check(
                err < 1e-6,
                &format!("trial {trial}: measured SNR off by {err:.3e} dB at {snr} dB"),
            );
        }
    }
    ac.pass(&format!(
        "measured SNR within {worst:.1e} dB of target across {{0, 2.5, 5}} dB"
    ));
}

// ---------------------------------------------------------------------------
// AC-10: CLI reproducibility from the persisted resolved config
// ---------------------------------------------------------------------------

fn egoav(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egoav"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn ac10_reproducibility() {
    let ac = Criterion::new("AC-10 reproducibility");
    let dir = tempfile::tempdir().unwrap();
    let generated = egoav(
        dir.path(),
        &[
            "--seed", "10", "generate", "--scenes", "4", "--seconds", "1", "--height", "48",
            "--width", "64", "--out", "corpus",
        ],
    );
    ac.check(
        generated.status.success(),
        &format!("generate failed: {}", String::from_utf8_lossy(&generated.stderr)),
    );

    let run1 = egoav(
        dir.path(),
        &[
            "--tiny", "--seed", "10", "pretrain", "--manifest", "corpus/manifest.jsonl",
            "--out", "run1", "--steps", "3", "--epochs", "1", "--warmup-epochs", "0",
            "--batch-size", "2",
        ],
    );
    ac.check(
        run1.status.success(),
        &format!("pretrain failed: {}", String::from_utf8_lossy(&run1.stderr)),
    );

    let resolved = dir.path().join("run1/resolved_config.toml");
    ac.check(resolved.exists(), "resolved_config.toml was not persisted");
    let rerun = Command::new(env!("CARGO_BIN_EXE_egoav"))
        .arg("--config")
        .arg(&resolved)
        .args(["pretrain", "--out", "run2"])
        .output()
        .unwrap();
    ac.check(
        rerun.status.success(),
        &format!("replay failed: {}", String::from_utf8_lossy(&rerun.stderr)),
    );

    let m1 = std::fs::read(dir.path().join("run1/metrics.jsonl")).unwrap();
    let m2 = std::fs::read(dir.path().join("run2/metrics.jsonl")).unwrap();
    ac.check(
        m1 == m2,
        "metrics files differ between a run and its resolved-config replay",
    );
    ac.pass(&format!(
        "replayed {} bytes of metrics byte-identically from the persisted config",
        m1.len()
    ));
}
