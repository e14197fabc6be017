//! Denoising metrics: SI-SDR / SI-SDRi and the spectrogram-level distance.

use ndarray::Array2;

use crate::error::{CoreError, Result};

use super::stft::stft;

/// Cap applied when the error energy underflows (perfect reconstruction).
pub const SI_SDR_CAP_DB: f64 = 80.0;

fn channel_si_sdr(reference: &[f32], estimate: &[f32]) -> Result<f64> {
    let dot: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(&r, &e)| r as f64 * e as f64)
        .sum();
    let ref_energy: f64 = reference.iter().map(|&r| (r as f64).powi(2)).sum();
    if ref_energy <= 0.0 {
        return Err(CoreError::SilentReference);
    }
    let scale = dot / ref_energy;
    let mut target_energy = 0.0f64;
    let mut error_energy = 0.0f64;
    for (&r, &e) in reference.iter().zip(estimate) {
        let t = scale * r as f64;
        target_energy += t * t;
        let d = e as f64 - t;
        error_energy += d * d;
    }
    if error_energy <= target_energy * 10f64.powf(-SI_SDR_CAP_DB / 10.0) {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target_energy / error_energy).log10()).min(SI_SDR_CAP_DB))
}

/// Scale-invariant SDR in dB, averaged over the two channels.
pub fn si_sdr(reference: &Array2<f32>, estimate: &Array2<f32>) -> Result<f64> {
    if reference.shape() != estimate.shape() {
        return Err(CoreError::ShapeMismatch(format!(
            "reference {:?} vs estimate {:?}",
            reference.shape(),
            estimate.shape()
        )));
    }
    let l = channel_si_sdr(
        reference.row(0).as_slice().unwrap(),
        estimate.row(0).as_slice().unwrap(),
    )?;
    let r = channel_si_sdr(
        reference.row(1).as_slice().unwrap(),
        estimate.row(1).as_slice().unwrap(),
    )?;
    Ok(0.5 * (l + r))
}

/// Improvement of the estimate over just using the mixture.
pub fn si_sdri(
    reference: &Array2<f32>,
    estimate: &Array2<f32>,
    mixture: &Array2<f32>,
) -> Result<f64> {
    Ok(si_sdr(reference, estimate)? - si_sdr(reference, mixture)?)
}

/// Mean squared error between binaural magnitude spectrograms, reported in
/// units of 1e-3.
pub fn stft_distance(reference: &Array2<f32>, estimate: &Array2<f32>) -> Result<f64> {
    if reference.shape() != estimate.shape() {
        return Err(CoreError::ShapeMismatch(format!(
            "reference {:?} vs estimate {:?}",
            reference.shape(),
            estimate.shape()
        )));
    }
    let a = stft(reference)?.magnitude();
    let b = stft(estimate)?.magnitude();
    let mse = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    Ok(mse * 1e3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stereo(n: usize, seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((2, n), |_| rng.gen::<f32>() - 0.5)
    }

    #[test]
    fn estimate_equal_to_mixture_improves_by_exactly_zero() {
        let reference = random_stereo(4000, 1);
        let mixture = random_stereo(4000, 2);
        assert_eq!(si_sdri(&reference, &mixture, &mixture).unwrap(), 0.0);
    }

    #[test]
    fn scale_invariance_with_cap() {
        let reference = random_stereo(4000, 3);
        let scaled = reference.mapv(|v| 3.7 * v);
        let a = si_sdr(&reference, &reference).unwrap();
        let b = si_sdr(&reference, &scaled).unwrap();
        assert_eq!(a, SI_SDR_CAP_DB);
        assert_eq!(a, b);
    }

    #[test]
    fn silent_reference_rejected() {
        let silent = Array2::zeros((2, 1000));
        let estimate = random_stereo(1000, 4);
        match si_sdr(&silent, &estimate) {
            Err(CoreError::SilentReference) => {}
            other => panic!("expected SilentReference, got {other:?}"),
        }
    }

    #[test]
    fn matches_brute_force_projection() {
        let reference = random_stereo(2000, 5);
        let estimate = random_stereo(2000, 6);
        let fast = si_sdr(&reference, &estimate).unwrap();
        let mut acc = 0.0f64;
        for ch in 0..2 {
            let r: Vec<f64> = reference.row(ch).iter().map(|&v| v as f64).collect();
            let e: Vec<f64> = estimate.row(ch).iter().map(|&v| v as f64).collect();
            let scale =
                r.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / r.iter().map(|a| a * a).sum::<f64>();
            let t: Vec<f64> = r.iter().map(|a| scale * a).collect();
            let te: f64 = t.iter().map(|a| a * a).sum();
            let ee: f64 = t.iter().zip(&e).map(|(a, b)| (b - a) * (b - a)).sum();
            acc += 10.0 * (te / ee).log10();
        }
        assert!((fast - acc / 2.0).abs() < 1e-9);
    }

    #[test]
    fn stft_distance_of_identical_signals_is_zero() {
        let x = random_stereo(4000, 7);
        assert_eq!(stft_distance(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn stft_distance_is_symmetric() {
        let a = random_stereo(4000, 8);
        let b = random_stereo(4000, 9);
        let d1 = stft_distance(&a, &b).unwrap();
        let d2 = stft_distance(&b, &a).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
        assert!(d1 > 0.0);
    }

    #[test]
    fn known_offset_matches_hand_computation() {
        let a = random_stereo(4000, 10);
        let mut b = a.clone();
        // bump exactly one sample; the spectrogram difference is then the
        // windowed DFT of a unit impulse scaled by the bump
        let bump = 0.25f32;
        b[(0, 1000)] += bump;
        let d = stft_distance(&a, &b).unwrap();
        let sa = stft(&a).unwrap().magnitude();
        let sb = stft(&b).unwrap().magnitude();
        let mse: f64 = sa
            .iter()
            .zip(sb.iter())
            .map(|(&x, &y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            / sa.len() as f64;
        assert!((d - mse * 1e3).abs() < 1e-12);
        assert!(d > 0.0);
    }
}
