//! SNR-controlled mixing of a target clip with noise from another clip.

use ndarray::Array2;

use crate::error::{CoreError, Result};

/// A mixture and its decomposition: `mixed == target + alpha * noise`.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub mixed: Array2<f32>,
    pub target: Array2<f32>,
    pub noise: Array2<f32>,
    pub snr_db: f64,
    pub alpha: f64,
}

fn power(x: &Array2<f32>) -> f64 {
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64
}

impl Mixture {
    /// Re-measure the target-to-scaled-noise power ratio in dB.
    pub fn measured_snr_db(&self) -> f64 {
        let scaled: Array2<f32> = self.noise.mapv(|v| (v as f64 * self.alpha) as f32);
        10.0 * (power(&self.target) / power(&scaled)).log10()
    }
}

/// Scale `noise` so the target-to-noise power ratio is `snr_db`, then add.
///
/// Power is measured over both channels jointly. If the raw sum clips, the
/// whole decomposition is scaled down uniformly so the mixture peaks at 1
/// and `mixed == target + alpha * noise` still holds for the stored copies.
pub fn mix_at_snr(target: &Array2<f32>, noise: &Array2<f32>, snr_db: f64) -> Result<Mixture> {
    if target.shape() != noise.shape() {
        return Err(CoreError::ShapeMismatch(format!(
            "target {:?} vs noise {:?}",
            target.shape(),
            noise.shape()
        )));
    }
    let p_t = power(target);
    let p_n = power(noise);
    if p_n <= 0.0 {
        return Err(CoreError::SilentNoise);
    }
    if p_t <= 0.0 {
        return Err(CoreError::SilentReference);
    }
    let alpha = (p_t / (p_n * 10f64.powf(snr_db / 10.0))).sqrt();

    let mut mixed = target.clone();
    mixed.zip_mut_with(noise, |m, &n| *m += (n as f64 * alpha) as f32);
    let peak = mixed.iter().fold(0.0f32, |acc, &v| acc.max(v.abs()));
    let scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };

    let target = target.mapv(|v| v * scale);
    let noise = noise.mapv(|v| v * scale);
    let mut mixed = target.clone();
    mixed.zip_mut_with(&noise, |m, &n| *m += (n as f64 * alpha) as f32);

    Ok(Mixture {
        mixed,
        target,
        noise,
        snr_db,
        alpha,
    })
}
