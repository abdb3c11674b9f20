use super::TrainConfig;
use crate::error::{Error, Result};

/// Step at which the learning rate peaks: `round(pct_start · total)`, kept
/// strictly inside the schedule so both phases are non-empty.
pub fn peak_step(total_steps: usize, cfg: &TrainConfig) -> usize {
    let p = (cfg.pct_start * total_steps as f64).round() as usize;
    p.clamp(1, total_steps.saturating_sub(2).max(1))
}

/// One-cycle policy with linear annealing: `(lr, β₁)` at `step`. The learning
/// rate rises from `max_lr / div_factor` to `max_lr` at the peak step and then
/// falls to `max_lr / div_factor / final_div_factor` at the last step, while
/// β₁ moves the opposite way between `max_momentum` and `base_momentum`.
pub fn one_cycle(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<(f64, f64)> {
    if total_steps < 3 {
        return Err(Error::Config(format!("one-cycle needs at least 3 steps, got {total_steps}")));
    }
    if step >= total_steps {
        return Err(Error::InvalidInput(format!("step {step} outside 0..{total_steps}")));
    }
    let peak = peak_step(total_steps, cfg);
    // (1 - t)·a + t·b hits both endpoints exactly.
    let lerp = |a: f64, b: f64, t: f64| (1.0 - t) * a + t * b;
    Ok(if step <= peak {
        let t = step as f64 / peak as f64;
        (lerp(cfg.initial_lr(), cfg.max_lr, t), lerp(cfg.max_momentum, cfg.base_momentum, t))
    } else {
        let t = (step - peak) as f64 / (total_steps - 1 - peak) as f64;
        (lerp(cfg.max_lr, cfg.final_lr(), t), lerp(cfg.base_momentum, cfg.max_momentum, t))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_are_exact() {
        let cfg = TrainConfig::default();
        let total = 1000;
        assert_eq!(one_cycle(0, total, &cfg).unwrap(), (7.96e-7, 0.8314));
        assert_eq!(peak_step(total, &cfg), 425);
        assert_eq!(one_cycle(425, total, &cfg).unwrap(), (7.96e-6, 0.7403));
        assert_eq!(one_cycle(999, total, &cfg).unwrap(), (7.96e-8, 0.8314));
    }

    #[test]
    fn rejects_out_of_range() {
        let cfg = TrainConfig::default();
        assert!(one_cycle(10, 10, &cfg).is_err());
        assert!(one_cycle(0, 2, &cfg).is_err());
    }
}
