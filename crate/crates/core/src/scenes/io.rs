//! Lossless clip media: raw frame archives and float32 WAV.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array4};

use crate::error::{CoreError, Result};

const FRAMES_MAGIC: &[u8; 4] = b"EGFR";

/// Write frames as a raw little-endian archive: magic, t/h/w as u32, then
/// f32 pixels in (t, y, x, channel) order.
pub fn write_frames(path: &Path, frames: &Array4<f32>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(FRAMES_MAGIC)?;
    let shape = frames.shape();
    if shape[3] != 3 {
        return Err(CoreError::ShapeMismatch(format!(
            "frames must have 3 color channels, got {}",
            shape[3]
        )));
    }
    for &dim in &shape[..3] {
        out.write_all(&(dim as u32).to_le_bytes())?;
    }
    for &v in frames.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<Array4<f32>> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != FRAMES_MAGIC {
        return Err(CoreError::Manifest(format!(
            "{} is not a frame archive",
            path.display()
        )));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let mut buf = [0u8; 4];
        input.read_exact(&mut buf)?;
        *d = u32::from_le_bytes(buf) as usize;
    }
    let (t, h, w) = (dims[0], dims[1], dims[2]);
    let count = t * h * w * 3;
    let mut bytes = vec![0u8; count * 4];
    input.read_exact(&mut bytes)?;
    let mut data = Vec::with_capacity(count);
    for chunk in bytes.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Array4::from_shape_vec((t, h, w, 3), data)
        .map_err(|e| CoreError::ShapeMismatch(e.to_string()))
}

/// Write a 2xN waveform as interleaved float32 stereo WAV at 16 kHz.
pub fn write_wav(path: &Path, waveform: &Array2<f32>) -> Result<()> {
    if waveform.shape()[0] != 2 {
        return Err(CoreError::ChannelCount(waveform.shape()[0]));
    }
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: crate::clip::SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for i in 0..waveform.shape()[1] {
        writer.write_sample(waveform[(0, i)])?;
        writer.write_sample(waveform[(1, i)])?;
    }
    writer.finalize()?;
    Ok(())
}

/// Read a stereo 16 kHz WAV (float32 or 16-bit PCM) into a 2xN array.
pub fn read_wav(path: &Path) -> Result<Array2<f32>> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_rate != crate::clip::SAMPLE_RATE {
        return Err(CoreError::SampleRate {
            rate: spec.sample_rate,
            file: path.display().to_string(),
        });
    }
    if spec.channels != 2 {
        return Err(CoreError::ChannelCount(spec.channels as usize));
    }
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let n = samples.len() / 2;
    let mut out = Array2::zeros((2, n));
    for i in 0..n {
        out[(0, i)] = samples[2 * i];
        out[(1, i)] = samples[2 * i + 1];
    }
    Ok(out)
}
