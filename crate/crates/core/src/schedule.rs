//! Linear warmup followed by half-cycle cosine annealing.

/// Learning rate at a global step. Ramps linearly from 0 to `peak_lr` over
/// `warmup_epochs * steps_per_epoch` steps, then decays with
/// `peak_lr * 0.5 * (1 + cos(pi * progress))` to 0 at the final step.
pub fn lr_at_step(
    peak_lr: f64,
    warmup_epochs: usize,
    total_epochs: usize,
    steps_per_epoch: usize,
    step: usize,
) -> f64 {
    let warmup_steps = warmup_epochs * steps_per_epoch;
    let total_steps = total_epochs * steps_per_epoch;
    if warmup_steps > 0 && step < warmup_steps {
        return peak_lr * step as f64 / warmup_steps as f64;
    }
    let decay_steps = total_steps.saturating_sub(warmup_steps).max(1);
    let progress = (step - warmup_steps) as f64 / decay_steps as f64;
    let progress = progress.clamp(0.0, 1.0);
    peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
