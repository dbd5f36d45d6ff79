/// Linear warmup to `lr0`, then cosine decay to zero at `total_steps`.
pub fn lr_schedule(step: u64, lr0: f64, warmup_steps: u64, total_steps: u64) -> f64 {
    debug_assert!(warmup_steps < total_steps);
    if step < warmup_steps {
        return lr0 * step as f64 / warmup_steps as f64;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}
