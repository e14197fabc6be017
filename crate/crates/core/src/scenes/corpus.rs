//! Corpus generation: render scenes, slice into 1 s clips, write a manifest.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clip::{RawClip, CLIP_FPS, SAMPLE_RATE};
use crate::error::{CoreError, Result};
use crate::scenes::io::{read_frames, read_wav, write_frames, write_wav};
use crate::scenes::render::{render_scene, ClipLabels, SceneSpec, SpeakerSpec};

/// Sprite palette; each color is tied to a source frequency band so visual
/// appearance carries information about the sound a speaker emits.
pub const PALETTE: [([f32; 3], (f32, f32)); 4] = [
    ([0.90, 0.25, 0.20], (200.0, 800.0)),
    ([0.20, 0.85, 0.30], (600.0, 1600.0)),
    ([0.25, 0.35, 0.95], (1200.0, 2800.0)),
    ([0.92, 0.85, 0.25], (2200.0, 4000.0)),
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_scenes: usize,
    pub duration_s: usize,
    pub height: usize,
    pub width: usize,
    pub speakers_min: usize,
    pub speakers_max: usize,
    /// Brighten sprites while their speaker is active.
    pub visual_activity_cue: bool,
    pub ambient_level: f32,
    /// Max absolute horizontal camera offset (normalized units).
    pub camera_pan_max: f32,
    pub dataset: String,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_scenes: 10,
            duration_s: 5,
            height: 240,
            width: 352,
            speakers_min: 1,
            speakers_max: 2,
            visual_activity_cue: true,
            ambient_level: 0.01,
            camera_pan_max: 0.05,
            dataset: "synthetic".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestRecord {
    pub clip_id: String,
    pub video_path: String,
    pub audio_path: String,
    pub labels_path: String,
    pub split: String,
    pub dataset: String,
    pub scene_id: usize,
    pub start_time: usize,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn path(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }

    pub fn split(&self, name: &str) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == name).collect()
    }

    pub fn save(&self) -> Result<()> {
        let mut out = Vec::new();
        for record in &self.records {
            serde_json::to_writer(&mut out, record)?;
            out.push(b'\n');
        }
        fs::write(self.path(), out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let root = path
            .parent()
            .ok_or_else(|| CoreError::Manifest(format!("{} has no parent dir", path.display())))?
            .to_path_buf();
        let text = fs::read_to_string(path)?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| CoreError::Manifest(format!("line {}: {e}", i + 1)))?;
            records.push(record);
        }
        if records.is_empty() {
            return Err(CoreError::EmptyCorpus);
        }
        Ok(Self { root, records })
    }
}

/// Draw a random scene from the configured distribution.
pub fn sample_scene(config: &CorpusConfig, scene_id: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x100000001b3) ^ scene_id as u64);
    let t = config.duration_s * CLIP_FPS as usize;
    let n_speakers = rng.gen_range(config.speakers_min..=config.speakers_max.max(config.speakers_min));

    let mut palette_order: Vec<usize> = (0..PALETTE.len()).collect();
    palette_order.shuffle(&mut rng);

    let mut speakers = Vec::with_capacity(n_speakers);
    for k in 0..n_speakers {
        let (color, band) = PALETTE[palette_order[k % PALETTE.len()]];
        let x0: f32 = rng.gen_range(0.12..0.88);
        let y0: f32 = rng.gen_range(0.25..0.75);
        let vx: f32 = rng.gen_range(-0.3..0.3) / t as f32;
        let vy: f32 = rng.gen_range(-0.1..0.1) / t as f32;
        let trajectory: Vec<(f32, f32)> = (0..t)
            .map(|f| {
                (
                    (x0 + vx * f as f32).clamp(0.05, 0.95),
                    (y0 + vy * f as f32).clamp(0.1, 0.9),
                )
            })
            .collect();
        // alternating on/off runs of 2 to 5 frames; solo scenes start active
        let mut activity = Vec::with_capacity(t);
        let mut on = n_speakers == 1 || k == 0;
        while activity.len() < t {
            let run = rng.gen_range(2..=5usize).min(t - activity.len());
            activity.extend(std::iter::repeat(on).take(run));
            on = !on;
        }
        speakers.push(SpeakerSpec {
            id: k,
            color,
            radius: rng.gen_range(0.07..0.12),
            trajectory,
            activity,
            band,
            am_rate: rng.gen_range(2.0..8.0),
            gain: rng.gen_range(0.1..0.4),
            seed: rng.gen(),
        });
    }

    let pan_target: f32 = rng.gen_range(-config.camera_pan_max..=config.camera_pan_max);
    let camera_pan: Vec<f32> = (0..t)
        .map(|f| pan_target * f as f32 / (t.max(2) - 1) as f32)
        .collect();

    SceneSpec {
        height: config.height,
        width: config.width,
        duration_s: config.duration_s,
        fps: CLIP_FPS as usize,
        speakers,
        ambient_level: config.ambient_level,
        camera_pan,
        visual_activity_cue: config.visual_activity_cue,
        seed: config.seed ^ (scene_id as u64).wrapping_mul(0x9e3779b97f4a7c15),
    }
}

/// Scene-disjoint train/val/test assignment (80/10/10 by scene count).
fn assign_splits(n_scenes: usize, seed: u64) -> Vec<&'static str> {
    let mut order: Vec<usize> = (0..n_scenes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    order.shuffle(&mut rng);
    let n_val = (n_scenes / 10).max(usize::from(n_scenes >= 3));
    let n_test = n_val.min(n_scenes.saturating_sub(n_val + 1));
    let mut splits = vec!["train"; n_scenes];
    for &idx in order.iter().take(n_val) {
        splits[idx] = "val";
    }
    for &idx in order.iter().skip(n_val).take(n_test) {
        splits[idx] = "test";
    }
    splits
}

/// Render `config.n_scenes` scenes into `out_dir`, slicing each into 1 s
/// clips, and write `manifest.jsonl`. Files written before a failure are
/// removed so no partial corpus is left behind.
pub fn generate_corpus(config: &CorpusConfig, out_dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(out_dir)?;
    let mut written: Vec<PathBuf> = Vec::new();
    match generate_corpus_inner(config, out_dir, &mut written) {
        Ok(manifest) => Ok(manifest),
        Err(e) => {
            for path in written {
                let _ = fs::remove_file(path);
            }
            Err(e)
        }
    }
}

fn generate_corpus_inner(
    config: &CorpusConfig,
    out_dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<Manifest> {
    if config.n_scenes == 0 {
        return Err(CoreError::EmptyCorpus);
    }
    let splits = assign_splits(config.n_scenes, config.seed);
    let frames_per_clip = CLIP_FPS as usize;
    let samples_per_clip = SAMPLE_RATE as usize;

    let mut records = Vec::new();
    for scene_id in 0..config.n_scenes {
        let spec = sample_scene(config, scene_id);
        let render = render_scene(&spec)?;
        for clip_idx in 0..config.duration_s {
            let clip_id = format!("{}_s{:04}_c{:02}", config.dataset, scene_id, clip_idx);
            let f0 = clip_idx * frames_per_clip;
            let s0 = clip_idx * samples_per_clip;
            let frames = render
                .frames
                .slice(s![f0..f0 + frames_per_clip, .., .., ..])
                .to_owned();
            let wave: Array2<f32> = render
                .waveform
                .slice(s![.., s0..s0 + samples_per_clip])
                .to_owned();

            let video_path = format!("{clip_id}.frames");
            let audio_path = format!("{clip_id}.wav");
            let labels_path = format!("{clip_id}.labels.json");

            let vp = out_dir.join(&video_path);
            write_frames(&vp, &frames)?;
            written.push(vp);
            let ap = out_dir.join(&audio_path);
            write_wav(&ap, &wave)?;
            written.push(ap);

            let mut stem_paths = Vec::new();
            for (k, stem) in render.stems.iter().enumerate() {
                let stem_path = format!("{clip_id}.stem{k}.wav");
                let sp = out_dir.join(&stem_path);
                write_wav(&sp, &stem.slice(s![.., s0..s0 + samples_per_clip]).to_owned())?;
                written.push(sp);
                stem_paths.push(stem_path);
            }

            let labels = ClipLabels {
                frames: render.labels[f0..f0 + frames_per_clip].to_vec(),
                stems: stem_paths,
            };
            let lp = out_dir.join(&labels_path);
            let mut file = fs::File::create(&lp)?;
            serde_json::to_writer(&mut file, &labels)?;
            file.flush()?;
            written.push(lp);

            records.push(ManifestRecord {
                clip_id,
                video_path,
                audio_path,
                labels_path,
                split: splits[scene_id].to_string(),
                dataset: config.dataset.clone(),
                scene_id,
                start_time: clip_idx,
            });
        }
    }

    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        records,
    };
    manifest.save()?;
    Ok(manifest)
}

/// Load one manifest record back into a `RawClip` plus its labels.
pub fn load_clip(root: &Path, record: &ManifestRecord) -> Result<(RawClip, ClipLabels)> {
    let frames = read_frames(&root.join(&record.video_path))?;
    let waveform = read_wav(&root.join(&record.audio_path))?;
    let labels: ClipLabels =
        serde_json::from_str(&fs::read_to_string(root.join(&record.labels_path))?)?;
    let clip = RawClip::new(
        frames,
        waveform,
        record.clip_id.clone(),
        record.dataset.clone(),
        record.start_time as f64,
    )?;
    Ok((clip, labels))
}
