//! AdamW with decoupled weight decay and a cosine schedule with a floor.

use serde::{Deserialize, Serialize};

use crate::model::{Float, ParamLayout};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub peak: f64,
    /// Learning rate at the final step, as a fraction of `peak`.
    pub floor_ratio: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl CosineSchedule {
    /// Rate for zero-based `step`: linear warmup, then cosine from `peak`
    /// at the first post-warmup step down to the floor at the last step.
    pub fn lr(&self, step: usize) -> f64 {
        let floor = self.peak * self.floor_ratio;
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(1).saturating_sub(self.warmup_steps);
        if span == 0 {
            return self.peak;
        }
        let p = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        floor + (self.peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    /// Completed updates.
    pub step: usize,
    decay: Vec<bool>,
}

impl<T: Float> AdamW<T> {
    pub fn new(config: AdamWConfig, layout: &ParamLayout) -> Self {
        let mut decay = vec![false; layout.total];
        for e in &layout.entries {
            if e.kind.decays() {
                decay[e.offset..e.offset + e.len].iter_mut().for_each(|d| *d = true);
            }
        }
        AdamW {
            config,
            m: vec![T::zero(); layout.total],
            v: vec![T::zero(); layout.total],
            step: 0,
            decay,
        }
    }

    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_m_b1, one_m_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let lr_t = T::of(lr);
        let wd = T::of(lr * c.weight_decay);
        let eps = T::of(c.eps);
        for i in 0..params.len() {
            let g = grads[i];
            let m = b1 * self.m[i] + one_m_b1 * g;
            let v = b2 * self.v[i] + one_m_b2 * g * g;
            self.m[i] = m;
            self.v[i] = v;
            let mut p = params[i];
            if self.decay[i] {
                p = p - wd * p;
            }
            params[i] = p - lr_t * (m / bc1) / ((v / bc2).sqrt() + eps);
        }
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm<T: Float>(grads: &mut [T], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        grads.iter_mut().for_each(|g| *g = *g * s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig, ModelState};

    #[test]
    fn cosine_endpoints() {
        let s = CosineSchedule {
            peak: 1e-3,
            floor_ratio: 0.1,
            warmup_steps: 0,
            total_steps: 100,
        };
        assert_eq!(s.lr(0), 1e-3);
        assert!((s.lr(99) - 1e-4).abs() < 1e-18);
        for k in 0..100 {
            assert!((s.lr(k) + s.lr(99 - k) - 1.1e-3).abs() < 1e-15);
        }
        for i in 1..100 {
            assert!(s.lr(i) <= s.lr(i - 1));
        }
        let w = CosineSchedule { warmup_steps: 10, ..s };
        assert!((w.lr(0) - 1e-4).abs() < 1e-18);
        assert_eq!(w.lr(10), 1e-3);
        assert!((w.lr(99) - 1e-4).abs() < 1e-18);
        let one = CosineSchedule { total_steps: 1, ..s };
        assert_eq!(one.lr(0), 1e-3);
    }

    /// One step against a scalar reference written out by hand.
    #[test]
    fn adamw_matches_scalar_reference() {
        let cfg = ModelConfig::new(1, 8, 16, 2);
        let mut m: ModelState<f64> = init_model(&cfg, 4).unwrap();
        let grads: Vec<f64> = (0..m.params.len()).map(|i| ((i % 7) as f64 - 3.0) * 1e-2).collect();
        let mut opt = AdamW::new(AdamWConfig::default(), &m.layout);
        let before = m.params.clone();
        let lr = 1e-3;
        opt.update(&mut m.params, &grads, lr);
        opt.update(&mut m.params, &grads, lr);
        for e in &m.layout.entries {
            let i = e.offset;
            let (mut p, mut mm, mut vv) = (before[i], 0.0, 0.0);
            for t in 1..=2 {
                let g = grads[i];
                mm = 0.9 * mm + 0.1 * g;
                vv = 0.95 * vv + 0.05 * g * g;
                if e.kind.decays() {
                    p -= lr * 0.1 * p;
                }
                let mh = mm / (1.0 - 0.9f64.powi(t));
                let vh = vv / (1.0 - 0.95f64.powi(t));
                p -= lr * mh / (vh.sqrt() + 1e-8);
            }
            assert!((p - m.params[i]).abs() < 1e-15, "{}", e.name);
        }
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0f64, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut h = vec![0.3f64, 0.4];
        clip_grad_norm(&mut h, 1.0);
        assert_eq!(h, vec![0.3, 0.4]);
    }
}
