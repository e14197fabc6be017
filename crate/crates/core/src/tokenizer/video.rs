//! Video tubelet tokenization.
//!
//! A clip is split into non-overlapping 16x16 spatial patches spanning all
//! `T` frames. Heights that are not multiples of 16 are zero-padded at the
//! bottom; widths must already be multiples of 16.

use ndarray::{Array2, Array4};

use crate::error::{CoreError, Result};

pub const PATCH_SIZE: usize = 16;

/// Tubelet tokens in row-major raster order plus their grid coordinates.
#[derive(Debug, Clone)]
pub struct VideoTokenGrid {
    /// `P x D_v` where `D_v = 16 * 16 * 3 * T`.
    pub tokens: Array2<f32>,
    /// Per-token `(t_idx, row, col)`; `t_idx` is 0 because tubelets span all
    /// frames, kept for the 3D positional embedding contract.
    pub coords: Vec<(usize, usize, usize)>,
    pub rows: usize,
    pub cols: usize,
    pub tubelet_depth: usize,
}

impl VideoTokenGrid {
    pub fn num_tokens(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn token_dim(&self) -> usize {
        self.tokens.shape()[1]
    }
}

/// Split `frames` (`T x H x W x 3`) into tubelet tokens.
pub fn tokenize_video(frames: &Array4<f32>) -> Result<VideoTokenGrid> {
    let (t, h, w, c) = {
        let s = frames.shape();
        (s[0], s[1], s[2], s[3])
    };
    if t == 0 || h == 0 || w == 0 {
        return Err(CoreError::EmptyClip);
    }
    if c != 3 {
        return Err(CoreError::ShapeMismatch(format!(
            "expected 3 color channels, got {c}"
        )));
    }
    if w % PATCH_SIZE != 0 {
        return Err(CoreError::ShapeMismatch(format!(
            "width {w} not divisible by {PATCH_SIZE}"
        )));
    }
    let rows = h.div_ceil(PATCH_SIZE);
    let cols = w / PATCH_SIZE;
    let token_dim = PATCH_SIZE * PATCH_SIZE * 3 * t;
    let mut tokens = Array2::zeros((rows * cols, token_dim));
    let mut coords = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for cl in 0..cols {
            let p = r * cols + cl;
            coords.push((0, r, cl));
            // flatten in (t, dy, dx, channel) order; rows past H stay zero
            let mut d = 0;
            for ti in 0..t {
                for dy in 0..PATCH_SIZE {
                    let y = r * PATCH_SIZE + dy;
                    for dx in 0..PATCH_SIZE {
                        let x = cl * PATCH_SIZE + dx;
                        for ch in 0..3 {
                            if y < h {
                                tokens[(p, d)] = frames[(ti, y, x, ch)];
                            }
                            d += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(VideoTokenGrid {
        tokens,
        coords,
        rows,
        cols,
        tubelet_depth: t,
    })
}
