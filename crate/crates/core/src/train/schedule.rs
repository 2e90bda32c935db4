//! Cyclical learning rate, exponential-range policy.

use serde::{Deserialize, Serialize};

/// Triangular wave between `base_lr` and `max_lr` with half-period
/// `step_size` iterations; the amplitude of cycle `c` (0-based) is
/// scaled by `gamma^c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclicalLr {
    pub base_lr: f64,
    pub max_lr: f64,
    pub step_size: usize,
    pub gamma: f64,
}

impl CyclicalLr {
    pub fn lr(&self, iteration: usize) -> f64 {
        let step = self.step_size as f64;
        let it = iteration as f64;
        let cycle = (iteration / (2 * self.step_size)) as i32;
        let x = (it / step - 2.0 * cycle as f64 - 1.0).abs();
        let amplitude = (self.max_lr - self.base_lr) * (1.0 - x).max(0.0);
        self.base_lr + amplitude * self.gamma.powi(cycle)
    }

    /// Iterations in one full cycle.
    pub fn period(&self) -> usize {
        2 * self.step_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peaks_and_troughs() {
        let s = CyclicalLr {
            base_lr: 1e-4,
            max_lr: 1e-2,
            step_size: 6,
            gamma: 0.1,
        };
        assert_eq!(s.lr(0), 1e-4);
        assert_eq!(s.lr(6), 1e-2);
        assert_eq!(s.lr(12), 1e-4);
        assert!((s.lr(18) - (1e-4 + (1e-2 - 1e-4) * 0.1)).abs() < 1e-18);
        assert!((s.lr(3) - (1e-4 + (1e-2 - 1e-4) * 0.5)).abs() < 1e-18);
    }
}
