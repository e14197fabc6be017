//! Constant-power panning with a fractional-delay ITD.

/// Max interaural time difference in seconds (applied at +-90 degrees).
pub const MAX_ITD_S: f32 = 0.45e-3;
pub const SAMPLE_RATE: f32 = 16_000.0;

/// Gain of the ear on the `s` side, `s` in [-1, 1] (+1 = fully that side).
/// Equals cos/sin of the usual quarter-circle pan law; written as a single
/// function of the signed azimuth so mirrored scenes swap channels bit-exactly.
fn pan_gain(s: f32) -> f32 {
    ((1.0 - s) * std::f32::consts::FRAC_PI_4).cos()
}

/// Linear-interpolated read of `x` at fractional position `pos`.
fn frac_read(x: &[f32], pos: f32) -> f32 {
    if pos <= 0.0 {
        return if pos <= -1.0 { 0.0 } else { x[0] * (1.0 + pos) };
    }
    let i = pos as usize;
    let frac = pos - i as f32;
    let a = if i < x.len() { x[i] } else { 0.0 };
    let b = if i + 1 < x.len() { x[i + 1] } else { 0.0 };
    a * (1.0 - frac) + b * frac
}

/// Spatialize a mono source given a per-sample azimuth in degrees
/// ([-90, 90], negative = left). Returns (left, right).
///
/// The near ear gets the constant-power gain at zero delay; the far ear is
/// delayed by up to [`MAX_ITD_S`] scaled linearly with |azimuth|.
pub fn binauralize(mono: &[f32], azimuth_deg: &[f32]) -> (Vec<f32>, Vec<f32>) {
    assert_eq!(mono.len(), azimuth_deg.len(), "per-sample azimuth required");
    let n = mono.len();
    let max_delay = MAX_ITD_S * SAMPLE_RATE;
    let mut left = vec![0.0f32; n];
    let mut right = vec![0.0f32; n];
    for i in 0..n {
        let s = (azimuth_deg[i] / 90.0).clamp(-1.0, 1.0);
        let g_l = pan_gain(-s);
        let g_r = pan_gain(s);
        let delay = s.abs() * max_delay;
        // the ear away from the source hears it later
        let (d_l, d_r) = if s > 0.0 { (delay, 0.0) } else { (0.0, delay) };
        left[i] = g_l * frac_read(mono, i as f32 - d_l);
        right[i] = g_r * frac_read(mono, i as f32 - d_r);
    }
    (left, right)
}
