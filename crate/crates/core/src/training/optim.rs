//! Adam with global-norm clipping and a per-stage cosine learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    /// Final learning rate of each stage as a fraction of `lr`.
    pub min_lr_fraction: f64,
    /// Linear ramp over the first updates of a fresh optimizer; useful when
    /// fine-tuning a trained checkpoint.
    #[serde(default)]
    pub warmup_steps: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            min_lr_fraction: 0.0,
            warmup_steps: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip_norm > 0.0
            && (0.0..=1.0).contains(&self.min_lr_fraction);
        if !ok {
            return invalid(format!("invalid optimizer config {self:?}"));
        }
        Ok(())
    }
}

/// Cosine decay from `lr` at step 0 to `lr·min_fraction` at `total`.
pub fn cosine_lr(lr: f64, min_fraction: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return lr;
    }
    let progress = (step as f64 / (total - 1) as f64).min(1.0);
    let floor = lr * min_fraction;
    floor + (lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

pub fn global_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(config: OptimizerConfig, len: usize) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Clips `grad` to the configured norm and applies one update at `lr`,
    /// scaled down during warmup.
    /// Returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut [f64], grad: &mut [f64], lr: f64) -> f64 {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        let norm = global_norm(grad);
        if norm > self.config.clip_norm {
            let s = self.config.clip_norm / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        self.t += 1;
        let warm = self.config.warmup_steps;
        let lr = if (self.t as usize) < warm { lr * self.t as f64 / warm as f64 } else { lr };
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.config.eps);
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1.0, 0.0, 0, 11), 1.0);
        assert!((cosine_lr(1.0, 0.0, 5, 11) - 0.5).abs() < 1e-12);
        assert!(cosine_lr(1.0, 0.0, 10, 11).abs() < 1e-12);
        assert!((cosine_lr(1.0, 0.1, 10, 11) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut opt = Adam::new(OptimizerConfig::default(), 2);
        let mut p = vec![1.0, -1.0];
        let mut g = vec![0.3, -0.2];
        opt.step(&mut p, &mut g, 0.01);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn warmup_ramps_the_step() {
        let cfg = OptimizerConfig {
            warmup_steps: 4,
            ..OptimizerConfig::default()
        };
        let mut opt = Adam::new(cfg, 1);
        let mut p = vec![0.0];
        let mut moved = Vec::new();
        for _ in 0..5 {
            let before = p[0];
            opt.step(&mut p, &mut vec![1.0], 0.1);
            moved.push(before - p[0]);
        }
        for (i, m) in moved.iter().enumerate() {
            let expect = 0.1 * ((i + 1) as f64 / 4.0).min(1.0);
            assert!((m - expect).abs() < 1e-7, "step {i}: {m}");
        }
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut opt = Adam::new(OptimizerConfig::default(), 2);
        let mut p = vec![0.0; 2];
        let mut g = vec![30.0, 40.0];
        let n = opt.step(&mut p, &mut g, 0.0);
        assert_eq!(n, 50.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut opt = Adam::new(OptimizerConfig::default(), 3);
        let mut p = vec![0.0, 0.5, -2.0];
        for _ in 0..5 {
            let mut g = vec![0.0; 3];
            opt.step(&mut p, &mut g, 0.1);
        }
        assert_eq!(p, vec![0.0, 0.5, -2.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = Adam::new(OptimizerConfig::default(), 1);
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let mut g = vec![2.0 * (p[0] - 1.0)];
            opt.step(&mut p, &mut g, 0.01);
        }
        assert!((p[0] - 1.0).abs() < 1e-2);
    }
}
