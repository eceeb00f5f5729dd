//! Learning-rate schedule: linear warmup to the peak rate, then
//! inverse-square-root decay.

/// Rate at optimizer step `step` (1-based). A zero warmup behaves like
/// warmup 1: full rate at the first step, decaying afterwards.
pub fn lr_schedule(step: u64, lr: f64, warmup_steps: u64) -> f64 {
    let step = step.max(1) as f64;
    let warmup = warmup_steps.max(1) as f64;
    if step <= warmup {
        lr * step / warmup
    } else {
        lr * (warmup / step).sqrt()
    }
}
