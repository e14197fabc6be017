//! STFT/ISTFT at the denoiser's resolution: 128-sample Hann windows, hop 64,
//! zero-padded to a 512-point transform (257 one-sided bins).

use ndarray::{Array2, Array3};
use num_complex::Complex32;
use rustfft::FftPlanner;

use crate::error::{CoreError, Result};

pub const STFT_WINDOW: usize = 128;
pub const STFT_HOP: usize = 64;
pub const STFT_NFFT: usize = 512;
pub const STFT_BINS: usize = STFT_NFFT / 2 + 1;

/// Binaural complex spectrogram, `2 x F x T_s`.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub data: Array3<Complex32>,
}

impl ComplexSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn magnitude(&self) -> Array3<f32> {
        self.data.mapv(|c| c.norm())
    }
}

fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| {
            let s = (std::f64::consts::PI * i as f64 / n as f64).sin();
            (s * s) as f32
        })
        .collect()
}

pub fn num_stft_frames(len: usize) -> Result<usize> {
    if len < STFT_WINDOW {
        return Err(CoreError::ClipTooShort {
            got: len,
            need: STFT_WINDOW,
        });
    }
    Ok(1 + (len - STFT_WINDOW) / STFT_HOP)
}

pub fn stft(waveform: &Array2<f32>) -> Result<ComplexSpectrogram> {
    let channels = waveform.shape()[0];
    if channels != 2 {
        return Err(CoreError::ChannelCount(channels));
    }
    let n = waveform.shape()[1];
    let frames = num_stft_frames(n)?;
    let window = hann(STFT_WINDOW);
    let mut planner = FftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(STFT_NFFT);

    let mut out = Array3::from_elem((2, STFT_BINS, frames), Complex32::default());
    let mut buf = vec![Complex32::default(); STFT_NFFT];
    for ch in 0..2 {
        for f in 0..frames {
            let start = f * STFT_HOP;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < STFT_WINDOW {
                    Complex32::new(waveform[(ch, start + i)] * window[i], 0.0)
                } else {
                    Complex32::default()
                };
            }
            fft.process(&mut buf);
            for k in 0..STFT_BINS {
                out[(ch, k, f)] = buf[k];
            }
        }
    }
    Ok(ComplexSpectrogram { data: out })
}

/// Overlap-add inverse with window-square normalization.
pub fn istft(spec: &ComplexSpectrogram, length: usize) -> Result<Array2<f32>> {
    let frames = spec.num_frames();
    if spec.data.shape()[1] != STFT_BINS {
        return Err(CoreError::ShapeMismatch(format!(
            "expected {STFT_BINS} bins, got {}",
            spec.data.shape()[1]
        )));
    }
    if num_stft_frames(length)? != frames {
        return Err(CoreError::ShapeMismatch(format!(
            "length {length} implies {} frames but spectrogram has {frames}",
            num_stft_frames(length)?
        )));
    }
    let window = hann(STFT_WINDOW);
    let mut planner = FftPlanner::<f32>::new();
    let ifft = planner.plan_fft_inverse(STFT_NFFT);

    let mut out = Array2::<f32>::zeros((2, length));
    let mut norm = vec![0.0f32; length];
    let mut buf = vec![Complex32::default(); STFT_NFFT];
    for ch in 0..2 {
        if ch == 1 {
            norm.iter_mut().for_each(|v| *v = 0.0);
        }
        for f in 0..frames {
            // rebuild the full conjugate-symmetric spectrum
            for k in 0..STFT_BINS {
                buf[k] = spec.data[(ch, k, f)];
            }
            for k in STFT_BINS..STFT_NFFT {
                buf[k] = spec.data[(ch, STFT_NFFT - k, f)].conj();
            }
            ifft.process(&mut buf);
            let start = f * STFT_HOP;
            for i in 0..STFT_WINDOW {
                let sample = buf[i].re / STFT_NFFT as f32;
                out[(ch, start + i)] += sample * window[i];
                norm[start + i] += window[i] * window[i];
            }
        }
        for i in 0..length {
            if norm[i] > 1e-8 {
                out[(ch, i)] /= norm[i];
            }
        }
    }
    Ok(out)
}
