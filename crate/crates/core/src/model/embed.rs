//! Fixed sinusoidal positional embeddings.
//!
//! Video tokens get a 3D embedding split across (t, row, col); audio tokens a
//! 2D embedding split across (time, mel). Axis sub-dimensions are even; when
//! the model dim is not an exact multiple the last axis absorbs the remainder.

use crate::error::{CoreError, Result};

/// Per-axis sub-dimensions for a `dim`-wide embedding over `axes` axes.
pub fn axis_dims(dim: usize, axes: usize) -> Result<Vec<usize>> {
    if dim % 2 != 0 || dim < 2 * axes {
        return Err(CoreError::InvalidConfig(format!(
            "embedding dim {dim} too small or odd for {axes} sinusoidal axes"
        )));
    }
    let base = (dim / axes) & !1usize;
    let mut dims = vec![base; axes];
    dims[axes - 1] = dim - base * (axes - 1);
    Ok(dims)
}

/// Interleaved sin/cos embedding of a single coordinate into `dim` values.
fn sincos_axis(pos: f64, dim: usize, out: &mut Vec<f64>) {
    let half = dim / 2;
    for i in 0..half {
        let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / dim as f64);
        out.push((pos * freq).sin());
        out.push((pos * freq).cos());
    }
}

/// Embedding of one multi-axis coordinate.
pub fn embed_coord(coord: &[usize], dim: usize) -> Result<Vec<f64>> {
    let dims = axis_dims(dim, coord.len())?;
    let mut out = Vec::with_capacity(dim);
    for (c, d) in coord.iter().zip(&dims) {
        sincos_axis(*c as f64, *d, &mut out);
    }
    Ok(out)
}

/// Table of embeddings for every tubelet of a (rows x cols) grid, raster order.
pub fn video_pos_table(rows: usize, cols: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut table = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            table.push(embed_coord(&[0, r, c], dim)?);
        }
    }
    Ok(table)
}

/// Embedding for one audio patch coordinate (time, mel).
pub fn audio_pos(time_idx: usize, mel_idx: usize, dim: usize) -> Result<Vec<f64>> {
    embed_coord(&[time_idx, mel_idx], dim)
}

/// Table over a full (time x mel) audio patch grid, time-major raster order.
pub fn audio_pos_table(time_patches: usize, mel_patches: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut table = Vec::with_capacity(time_patches * mel_patches);
    for t in 0..time_patches {
        for m in 0..mel_patches {
            table.push(audio_pos(t, m, dim)?);
        }
    }
    Ok(table)
}

/// 1D sinusoidal embedding of a frame index (fusion decoder queries).
pub fn frame_index_embedding(frame: usize, dim: usize) -> Result<Vec<f64>> {
    embed_coord(&[frame], dim)
}
