//! Log-Mel spectrogram frontend for binaural waveforms.
//!
//! 25 ms (400-sample) windows, 10 ms (160-sample) hop, 512-point FFT,
//! 128 triangular Mel filters spanning 0-8000 Hz, log compression, then
//! corpus-level mean/std normalization. Edge frames are snipped rather than
//! padded, so a 1 s clip yields exactly 98 windows.

use ndarray::Array2;
use num_complex::Complex32;
use rustfft::FftPlanner;

use crate::error::{CoreError, Result};
use crate::tokenizer::stats::NormalizationStats;

pub const WINDOW_LEN: usize = 400;
pub const HOP_LEN: usize = 160;
pub const FFT_LEN: usize = 512;
pub const NUM_MEL_BINS: usize = 128;
pub const MEL_FMIN: f32 = 0.0;
pub const MEL_FMAX: f32 = 8000.0;
pub const LOG_FLOOR: f32 = 1e-10;

/// Normalized left/right log-Mel spectrograms, time-major (`F_t x F_m`).
#[derive(Debug, Clone)]
pub struct MelSpectrogramPair {
    pub left: Array2<f32>,
    pub right: Array2<f32>,
}

impl MelSpectrogramPair {
    pub fn num_windows(&self) -> usize {
        self.left.shape()[0]
    }

    pub fn num_mel_bins(&self) -> usize {
        self.left.shape()[1]
    }

    pub fn channel(&self, ch: usize) -> &Array2<f32> {
        if ch == 0 {
            &self.left
        } else {
            &self.right
        }
    }

    /// Swap the left and right spectrograms (the audio half of a width flip).
    pub fn swapped(&self) -> Self {
        Self {
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }
}

fn hz_to_mel(hz: f32) -> f32 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

fn mel_to_hz(mel: f32) -> f32 {
    700.0 * ((mel / 1127.0).exp() - 1.0)
}

/// Triangular Mel filterbank over one-sided FFT bins.
pub struct MelFilterbank {
    /// `NUM_MEL_BINS x (FFT_LEN/2 + 1)` weights.
    weights: Array2<f32>,
    centers_hz: Vec<f32>,
}

impl MelFilterbank {
    pub fn new(sample_rate: f32) -> Self {
        let n_bins = FFT_LEN / 2 + 1;
        let mel_lo = hz_to_mel(MEL_FMIN);
        let mel_hi = hz_to_mel(MEL_FMAX);
        // Filter i spans mel points [i, i+1, i+2] of NUM_MEL_BINS + 2 evenly
        // spaced points.
        let points: Vec<f32> = (0..NUM_MEL_BINS + 2)
            .map(|i| mel_lo + (mel_hi - mel_lo) * i as f32 / (NUM_MEL_BINS + 1) as f32)
            .collect();
        let mut weights = Array2::zeros((NUM_MEL_BINS, n_bins));
        let mut centers_hz = Vec::with_capacity(NUM_MEL_BINS);
        for m in 0..NUM_MEL_BINS {
            let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
            centers_hz.push(mel_to_hz(center));
            for k in 0..n_bins {
                let freq = k as f32 * sample_rate / FFT_LEN as f32;
                let mel = hz_to_mel(freq);
                let w = if mel <= lo || mel >= hi {
                    0.0
                } else if mel <= center {
                    (mel - lo) / (center - lo)
                } else {
                    (hi - mel) / (hi - center)
                };
                if w > 0.0 {
                    weights[(m, k)] = w;
                }
            }
        }
        Self {
            weights,
            centers_hz,
        }
    }

    /// Center frequency of each Mel bin in Hz.
    pub fn center_frequencies(&self) -> &[f32] {
        &self.centers_hz
    }

    /// Filterbank response to a power spectrum (`FFT_LEN/2 + 1` values).
    pub fn apply(&self, power: &[f32]) -> Vec<f32> {
        self.weights
            .outer_iter()
            .map(|row| row.iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Number of analysis windows for an `n`-sample waveform (snipped edges).
pub fn num_windows(n: usize) -> usize {
    if n < WINDOW_LEN {
        0
    } else {
        1 + (n - WINDOW_LEN) / HOP_LEN
    }
}

fn hann_window(len: usize) -> Vec<f32> {
    (0..len)
        .map(|i| {
            let x = std::f32::consts::PI * i as f32 / len as f32;
            let s = x.sin();
            s * s
        })
        .collect()
}

/// Unnormalized log-Mel spectrogram of a single channel, time-major.
pub fn log_mel(channel: &[f32], bank: &MelFilterbank) -> Result<Array2<f32>> {
    let n = channel.len();
    if n < WINDOW_LEN {
        return Err(CoreError::ClipTooShort {
            got: n,
            need: WINDOW_LEN,
        });
    }
    let frames = num_windows(n);
    let window = hann_window(WINDOW_LEN);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(FFT_LEN);
    let mut out = Array2::zeros((frames, NUM_MEL_BINS));
    let mut buf = vec![Complex32::default(); FFT_LEN];
    let mut power = vec![0.0f32; FFT_LEN / 2 + 1];
    for t in 0..frames {
        let start = t * HOP_LEN;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < WINDOW_LEN {
                Complex32::new(channel[start + i] * window[i], 0.0)
            } else {
                Complex32::default()
            };
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        let mel = bank.apply(&power);
        for (m, v) in mel.iter().enumerate() {
            out[(t, m)] = (v + LOG_FLOOR).ln();
        }
    }
    Ok(out)
}

/// Normalized log-Mel pair for a 2-channel waveform.
///
/// Channels are transformed independently and normalized with the corpus
/// statistics in `stats`.
pub fn compute_mel_pair(
    waveform: &Array2<f32>,
    stats: &NormalizationStats,
) -> Result<MelSpectrogramPair> {
    if waveform.shape()[0] != 2 {
        return Err(CoreError::ChannelCount(waveform.shape()[0]));
    }
    let bank = MelFilterbank::new(16_000.0);
    let left_raw: Vec<f32> = waveform.row(0).to_vec();
    let right_raw: Vec<f32> = waveform.row(1).to_vec();
    let mut left = log_mel(&left_raw, &bank)?;
    let mut right = log_mel(&right_raw, &bank)?;
    for x in left.iter_mut().chain(right.iter_mut()) {
        *x = (*x - stats.audio_mean) / stats.audio_std;
    }
    Ok(MelSpectrogramPair { left, right })
}
