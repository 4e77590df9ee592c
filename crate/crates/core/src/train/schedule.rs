use serde::{Deserialize, Serialize};

/// Decay applied after warmup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Decay {
    /// Half cosine from the peak down to `min_lr` at the last step.
    Cosine,
    /// Multiply by `gamma` at each milestone, given as fractions of the
    /// post-warmup steps.
    Step { gamma: f64, milestones: alloc::vec::Vec<f64> },
}

impl Default for Decay {
    fn default() -> Self {
        Decay::Cosine
    }
}

/// Resolved schedule for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub decay: Decay,
}

impl Schedule {
    /// Learning rate for step `t ∈ [0, total_steps)`.
    ///
    /// Linear warmup `peak·(t+1)/warmup` reaches the peak at `t = warmup − 1`;
    /// the decay then runs from the peak at `t = warmup` to `min_lr` at
    /// `t = total − 1`.
    pub fn lr_at_step(&self, t: usize) -> f64 {
        let w = self.warmup_steps;
        if t < w {
            return self.peak_lr * (t + 1) as f64 / w as f64;
        }
        let span = self.total_steps.saturating_sub(1).saturating_sub(w);
        let progress = if span == 0 { 1.0 } else { ((t - w) as f64 / span as f64).min(1.0) };
        match &self.decay {
            Decay::Cosine => {
                self.min_lr
                    + 0.5 * (self.peak_lr - self.min_lr) * (1.0 + libm::cos(core::f64::consts::PI * progress))
            }
            Decay::Step { gamma, milestones } => {
                let passed = milestones.iter().filter(|&&m| progress >= m).count();
                (self.peak_lr * libm::pow(*gamma, passed as f64)).max(self.min_lr)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cosine(warmup: usize, total: usize) -> Schedule {
        Schedule { peak_lr: 1e-3, min_lr: 1e-5, warmup_steps: warmup, total_steps: total, decay: Decay::Cosine }
    }

    #[test]
    fn warmup_endpoint_is_peak() {
        let s = cosine(10, 100);
        assert_eq!(s.lr_at_step(9), 1e-3);
        assert!((s.lr_at_step(0) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn last_step_is_floor() {
        let s = cosine(10, 100);
        assert!((s.lr_at_step(99) - 1e-5).abs() < 1e-12);
        assert!((cosine(0, 1).lr_at_step(0) - 1e-5).abs() < 1e-12);
    }

    #[test]
    fn cosine_midpoint() {
        // post-warmup span 10..=110, midpoint t = 60
        let s = cosine(10, 111);
        assert!((s.lr_at_step(60) - (1e-3 + 1e-5) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn monotone_after_warmup() {
        let s = cosine(5, 50);
        for t in 5..49 {
            assert!(s.lr_at_step(t + 1) <= s.lr_at_step(t));
        }
    }

    #[test]
    fn step_decay() {
        let s = Schedule { decay: Decay::Step { gamma: 0.1, milestones: vec![0.5, 0.75] }, ..cosine(0, 101) };
        assert_eq!(s.lr_at_step(0), 1e-3);
        assert!((s.lr_at_step(50) - 1e-4).abs() < 1e-18);
        assert!((s.lr_at_step(100) - 1e-5).abs() < 1e-18);
    }
}
