//! Scene rendering: sprites to frames, sources to binaural audio.

use ndarray::{Array2, Array4};
use num_complex::Complex32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::clip::SAMPLE_RATE;
use crate::error::{CoreError, Result};
use crate::scenes::binaural::binauralize;

/// One rendered speaker: a colored sprite with a trajectory, an activity
/// pattern, and a band-limited amplitude-modulated noise source.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeakerSpec {
    pub id: usize,
    pub color: [f32; 3],
    /// Sprite radius as a fraction of frame height.
    pub radius: f32,
    /// Per-frame normalized (x, y) positions in [0, 1]^2.
    pub trajectory: Vec<(f32, f32)>,
    /// Per-frame speech on/off flags.
    pub activity: Vec<bool>,
    /// Source band in Hz (low, high).
    pub band: (f32, f32),
    /// Amplitude-modulation rate in Hz.
    pub am_rate: f32,
    /// Source gain; randomized per speaker so a channel's absolute level
    /// does not determine its azimuth.
    #[serde(default = "default_gain")]
    pub gain: f32,
    pub seed: u64,
}

fn default_gain() -> f32 {
    0.25
}

/// A full synthetic scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub duration_s: usize,
    pub fps: usize,
    pub speakers: Vec<SpeakerSpec>,
    /// RMS of the diotic ambient noise.
    pub ambient_level: f32,
    /// Per-frame horizontal camera offset (normalized; subtracted from x).
    pub camera_pan: Vec<f32>,
    /// Brighten a sprite while its speaker is active.
    pub visual_activity_cue: bool,
    pub seed: u64,
}

impl SceneSpec {
    pub fn num_frames(&self) -> usize {
        self.duration_s * self.fps
    }

    pub fn num_samples(&self) -> usize {
        self.duration_s * SAMPLE_RATE as usize
    }

    /// Left/right mirrored copy of the scene.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for sp in &mut out.speakers {
            for p in &mut sp.trajectory {
                p.0 = 1.0 - p.0;
            }
        }
        for p in &mut out.camera_pan {
            *p = -*p;
        }
        out
    }
}

/// Per-frame per-speaker ground truth.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpeakerLabel {
    pub id: usize,
    /// Normalized (x, y, w, h) of the sprite's bounding box, camera-relative.
    pub bbox: [f32; 4],
    pub active: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrameLabels {
    pub speakers: Vec<SpeakerLabel>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct ClipLabels {
    pub frames: Vec<FrameLabels>,
    /// Paths of per-speaker clean binaural stems, once written to disk.
    #[serde(default)]
    pub stems: Vec<String>,
}

/// Full render output, including per-speaker stems for denoising ground truth.
pub struct SceneRender {
    pub frames: Array4<f32>,
    pub waveform: Array2<f32>,
    pub labels: Vec<FrameLabels>,
    /// Per-speaker clean binaural stems (same length as the mixture).
    pub stems: Vec<Array2<f32>>,
    pub ambient: Array2<f32>,
}

/// Band-limited noise via FFT masking, unit RMS.
fn band_noise(n: usize, band: (f32, f32), seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = FftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex32> = (0..n)
        .map(|_| Complex32::new(rng.gen::<f32>() * 2.0 - 1.0, 0.0))
        .collect();
    fft.process(&mut buf);
    let df = SAMPLE_RATE as f32 / n as f32;
    for (k, v) in buf.iter_mut().enumerate() {
        let f = if k <= n / 2 { k as f32 * df } else { (n - k) as f32 * df };
        if f < band.0 || f > band.1 {
            *v = Complex32::default();
        }
    }
    ifft.process(&mut buf);
    let mut out: Vec<f32> = buf.iter().map(|c| c.re / n as f32).collect();
    let rms = (out.iter().map(|x| x * x).sum::<f32>() / n as f32).sqrt();
    if rms > 0.0 {
        for x in &mut out {
            *x /= rms;
        }
    }
    out
}

/// Piecewise-linear upsample of per-frame values to per-sample values.
fn per_sample(values: &[f32], n_samples: usize) -> Vec<f32> {
    let frames = values.len();
    if frames == 1 {
        return vec![values[0]; n_samples];
    }
    let samples_per_frame = n_samples as f32 / frames as f32;
    (0..n_samples)
        .map(|i| {
            // frame centers at (f + 0.5) * samples_per_frame
            let pos = i as f32 / samples_per_frame - 0.5;
            let f = pos.floor();
            let frac = pos - f;
            let f0 = (f.max(0.0) as usize).min(frames - 1);
            let f1 = (f0 + 1).min(frames - 1);
            if pos < 0.0 {
                values[0]
            } else {
                values[f0] * (1.0 - frac) + values[f1] * frac
            }
        })
        .collect()
}

/// Activity gate with 10 ms linear ramps at frame boundaries.
fn activity_envelope(activity: &[bool], n_samples: usize, fps: usize) -> Vec<f32> {
    let samples_per_frame = n_samples / activity.len().max(1);
    let ramp = (SAMPLE_RATE as usize / 100).min(samples_per_frame / 2); // 10 ms
    let _ = fps;
    let mut env = vec![0.0f32; n_samples];
    for (f, &on) in activity.iter().enumerate() {
        if !on {
            continue;
        }
        let start = f * samples_per_frame;
        let end = ((f + 1) * samples_per_frame).min(n_samples);
        for (k, e) in env[start..end].iter_mut().enumerate() {
            let up = ((k + 1) as f32 / ramp as f32).min(1.0);
            let down = ((end - start - k) as f32 / ramp as f32).min(1.0);
            // keep full level across adjacent active frames
            *e = e.max(up.min(down));
        }
    }
    // merge ramps across consecutive active frames
    for f in 0..activity.len().saturating_sub(1) {
        if activity[f] && activity[f + 1] {
            let boundary = (f + 1) * samples_per_frame;
            let lo = boundary.saturating_sub(ramp);
            let hi = (boundary + ramp).min(n_samples);
            for e in env[lo..hi].iter_mut() {
                *e = 1.0;
            }
        }
    }
    env
}

fn draw_sprite(
    frame: &mut ndarray::ArrayViewMut3<f32>,
    cx: f32,
    cy: f32,
    radius_px: f32,
    color: [f32; 3],
) {
    let (h, w) = (frame.shape()[0], frame.shape()[1]);
    let r2 = radius_px * radius_px;
    let y_lo = ((cy - radius_px).floor().max(0.0)) as usize;
    let y_hi = ((cy + radius_px).ceil().min(h as f32 - 1.0)) as usize;
    for y in y_lo..=y_hi.min(h - 1) {
        for x in 0..w {
            let dx = x as f32 - cx;
            let dy = y as f32 - cy;
            if dx * dx + dy * dy <= r2 {
                for c in 0..3 {
                    frame[(y, x, c)] = color[c];
                }
            }
        }
    }
}

/// Render a scene to frames, binaural audio, labels and stems.
pub fn render_scene(spec: &SceneSpec) -> Result<SceneRender> {
    if spec.speakers.is_empty() {
        return Err(CoreError::InvalidConfig("scene needs at least one speaker".into()));
    }
    {
        let mut ids: Vec<usize> = spec.speakers.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != spec.speakers.len() {
            return Err(CoreError::InvalidConfig("overlapping sprite ids".into()));
        }
    }
    if spec.width % 16 != 0 {
        return Err(CoreError::InvalidConfig(format!(
            "width {} not divisible by 16",
            spec.width
        )));
    }
    let t = spec.num_frames();
    let n = spec.num_samples();
    let (h, w) = (spec.height, spec.width);

    let pan = if spec.camera_pan.is_empty() {
        vec![0.0; t]
    } else {
        spec.camera_pan.clone()
    };

    // video
    let mut frames = Array4::from_elem((t, h, w, 3), 0.08f32);
    let mut labels = Vec::with_capacity(t);
    for fi in 0..t {
        let mut frame = frames.index_axis_mut(ndarray::Axis(0), fi);
        let mut frame_labels = Vec::new();
        for sp in &spec.speakers {
            let (x, y) = sp.trajectory[fi.min(sp.trajectory.len() - 1)];
            let x_screen = x - pan[fi];
            let active = sp.activity[fi.min(sp.activity.len() - 1)];
            let color = if spec.visual_activity_cue && active {
                sp.color
            } else if spec.visual_activity_cue {
                [sp.color[0] * 0.35, sp.color[1] * 0.35, sp.color[2] * 0.35]
            } else {
                sp.color
            };
            let cx = x_screen * (w - 1) as f32;
            let cy = y * (h - 1) as f32;
            let r_px = sp.radius * h as f32;
            draw_sprite(&mut frame, cx, cy, r_px, color);
            let r_nx = r_px / w as f32;
            let r_ny = r_px / h as f32;
            frame_labels.push(SpeakerLabel {
                id: sp.id,
                bbox: [x_screen - r_nx, y - r_ny, 2.0 * r_nx, 2.0 * r_ny],
                active,
            });
        }
        labels.push(FrameLabels {
            speakers: frame_labels,
        });
    }

    // audio: each active source binauralized from its on-screen azimuth
    let mut stems = Vec::with_capacity(spec.speakers.len());
    for sp in &spec.speakers {
        let src = band_noise(n, sp.band, spec.seed ^ sp.seed.wrapping_mul(0x9e3779b9));
        let env = activity_envelope(&sp.activity, n, spec.fps);
        let am: Vec<f32> = (0..n)
            .map(|i| {
                let ph = 2.0 * std::f32::consts::PI * sp.am_rate * i as f32 / SAMPLE_RATE as f32;
                0.55 + 0.45 * ph.sin()
            })
            .collect();
        let gated: Vec<f32> = (0..n).map(|i| sp.gain * src[i] * env[i] * am[i]).collect();

        let x_frames: Vec<f32> = (0..t)
            .map(|fi| {
                let (x, _) = sp.trajectory[fi.min(sp.trajectory.len() - 1)];
                x - pan[fi]
            })
            .collect();
        let x_samples = per_sample(&x_frames, n);
        let az: Vec<f32> = x_samples
            .iter()
            .map(|x| (x.clamp(0.0, 1.0) - 0.5) * 180.0)
            .collect();
        let (l, r) = binauralize(&gated, &az);
        let mut stem = Array2::zeros((2, n));
        for i in 0..n {
            stem[(0, i)] = l[i];
            stem[(1, i)] = r[i];
        }
        stems.push(stem);
    }

    // diotic ambient noise so mirrored scenes stay channel-swap symmetric
    let mut ambient = Array2::zeros((2, n));
    if spec.ambient_level > 0.0 {
        let noise = band_noise(n, (50.0, 7500.0), spec.seed.wrapping_mul(31).wrapping_add(7));
        for i in 0..n {
            let v = spec.ambient_level * noise[i];
            ambient[(0, i)] = v;
            ambient[(1, i)] = v;
        }
    }

    let mut waveform = ambient.clone();
    for stem in &stems {
        waveform += stem;
    }
    // headroom clamp; synthetic levels are chosen so this rarely binds
    waveform.mapv_inplace(|x| x.clamp(-1.0, 1.0));

    Ok(SceneRender {
        frames,
        waveform,
        labels,
        stems,
        ambient,
    })
}
