//! Adaptive-moment optimizer and step-decay schedule.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    steps: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = shapes
            .into_iter()
            .map(|s| (Array2::zeros(s), Array2::zeros(s)))
            .unzip();
        Adam { cfg, m, v, steps: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// One bias-corrected update of every tensor in place.
    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer built for a different parameter set");
        self.steps += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.steps);
        let bc2 = 1.0 - c.beta2.powi(self.steps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                });
        }
    }
}

/// Step size for epoch `epoch`: `lr0 · factor^floor(epoch / every)`, so the
/// step drops at epochs `every`, `2·every`, ...
pub fn decayed_lr(lr0: f64, factor: f64, every: usize, epoch: usize) -> f64 {
    if every == 0 {
        return lr0;
    }
    lr0 * factor.powi((epoch / every) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![array![[1.0, -1.0]]];
        let g = vec![array![[0.5, -3.0]]];
        let mut opt = Adam::new(AdamConfig::default(), [(1, 2)]);
        opt.step(&mut p, &g, 0.1);
        assert!((p[0][[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p[0][[0, 1]] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![array![[4.0]]];
        let mut opt = Adam::new(AdamConfig::default(), [(1, 1)]);
        for _ in 0..2000 {
            let g = vec![p[0].mapv(|x| 2.0 * (x - 1.0))];
            opt.step(&mut p, &g, 0.05);
        }
        assert!((p[0][[0, 0]] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn decay_schedule() {
        assert_eq!(decayed_lr(1.0, 0.9, 10, 9), 1.0);
        assert!((decayed_lr(1.0, 0.9, 10, 10) - 0.9).abs() < 1e-15);
        assert!((decayed_lr(1.0, 0.9, 10, 20) - 0.81).abs() < 1e-15);
    }
}
