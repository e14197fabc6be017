//! Corpus-level normalization statistics.
//!
//! Single-pass Welford accumulation over all Mel values and all pixels;
//! partial accumulators merge associatively so workers can share the load.

use serde::{Deserialize, Serialize};

use crate::clip::RawClip;
use crate::error::{CoreError, Result};
use crate::tokenizer::mel::{log_mel, MelFilterbank};

/// Per-corpus constants persisted next to checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormalizationStats {
    pub video_mean: [f32; 3],
    pub video_std: [f32; 3],
    pub audio_mean: f32,
    pub audio_std: f32,
    pub corpus_id: String,
}

impl NormalizationStats {
    /// Zero-mean, unit-std stats (no-op normalization).
    pub fn identity(corpus_id: impl Into<String>) -> Self {
        Self {
            video_mean: [0.0; 3],
            video_std: [1.0; 3],
            audio_mean: 0.0,
            audio_std: 1.0,
            corpus_id: corpus_id.into(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Welford running mean/variance for one scalar stream.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).sqrt()
        }
    }
}

/// Partial stats over a subset of clips; merge before finalizing.
#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator {
    pub audio: Welford,
    pub video: [Welford; 3],
}

impl StatsAccumulator {
    pub fn push_clip(&mut self, clip: &RawClip, bank: &MelFilterbank) -> Result<()> {
        for ch in 0..2 {
            let samples: Vec<f32> = clip.waveform.row(ch).to_vec();
            let mel = log_mel(&samples, bank)?;
            for &v in mel.iter() {
                self.audio.push(v as f64);
            }
        }
        for ((.., c), &v) in clip.frames.indexed_iter() {
            self.video[c].push(v as f64);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        self.audio.merge(&other.audio);
        for c in 0..3 {
            self.video[c].merge(&other.video[c]);
        }
    }

    pub fn finalize(&self, corpus_id: impl Into<String>) -> Result<NormalizationStats> {
        if self.audio.count() == 0 {
            return Err(CoreError::EmptyCorpus);
        }
        let audio_std = self.audio.std();
        if audio_std <= 0.0 {
            return Err(CoreError::DegenerateCorpus);
        }
        let mut video_mean = [0.0f32; 3];
        let mut video_std = [0.0f32; 3];
        for c in 0..3 {
            video_mean[c] = self.video[c].mean() as f32;
            // all-constant video (e.g. black frames) is tolerated: std
            // clamps to 1 so normalization is a pure shift
            let s = self.video[c].std();
            video_std[c] = if s > 0.0 { s as f32 } else { 1.0 };
        }
        Ok(NormalizationStats {
            video_mean,
            video_std,
            audio_mean: self.audio.mean() as f32,
            audio_std: audio_std as f32,
            corpus_id: corpus_id.into(),
        })
    }
}

/// Streaming mean/std over a clip corpus.
pub fn compute_norm_stats<'a, I>(clips: I, corpus_id: &str) -> Result<NormalizationStats>
where
    I: IntoIterator<Item = &'a RawClip>,
{
    let bank = MelFilterbank::new(16_000.0);
    let mut acc = StatsAccumulator::default();
    let mut any = false;
    for clip in clips {
        any = true;
        acc.push_clip(clip, &bank)?;
    }
    if !any {
        return Err(CoreError::EmptyCorpus);
    }
    acc.finalize(corpus_id)
}
