//! Learning-rate schedule: linear warmup from zero, then linear decay from
//! the base rate to zero at the final step.

/// Learning rate for 0-based `step` out of `total` steps with `warmup`
/// warmup steps. Steps past `total` clamp to zero (with a warning, since the
/// caller is likely iterating past the configured horizon).
pub fn linear_lr(step: u64, warmup: u64, total: u64, base: f64) -> f64 {
    if step > total {
        log::warn!("learning-rate schedule queried at step {step} past total {total}; clamping to 0");
        return 0.0;
    }
    if step < warmup {
        return base * step as f64 / warmup as f64;
    }
    if total == warmup {
        // Degenerate horizon: decay phase has zero length.
        return if step == total { 0.0 } else { base };
    }
    base * (total - step) as f64 / (total - warmup) as f64
}
