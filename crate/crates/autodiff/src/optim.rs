//! AdamW with decoupled weight decay, global-norm gradient clipping and a
//! linear-warmup + cosine-annealing learning rate.

use std::f64::consts::PI;

use crate::error::{AutodiffError, Result};
use crate::params::ParamSet;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
    pub weight_decay: f64,
    /// Global L2 norm the gradient is clipped to; non-positive disables.
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr_max: 1e-3,
            lr_min: 1e-5,
            warmup_epochs: 5.0,
            total_epochs: 120.0,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning rate at fractional `epoch`: linear from 0 to `lr_max` over the
/// warmup, then cosine from `lr_max` down to `lr_min` at `total_epochs`.
pub fn lr_schedule(epoch: f64, cfg: &AdamWConfig) -> f64 {
    let epoch = epoch.clamp(0.0, cfg.total_epochs);
    if epoch < cfg.warmup_epochs {
        return cfg.lr_max * epoch / cfg.warmup_epochs;
    }
    let span = cfg.total_epochs - cfg.warmup_epochs;
    let progress = if span > 0.0 {
        (epoch - cfg.warmup_epochs) / span
    } else {
        1.0
    };
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (PI * progress).cos())
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Applied {
        lr: f64,
        grad_norm: f64,
    },
    /// Gradients contained NaN or infinity; parameters and moments untouched.
    Skipped,
}

/// AdamW state: step counter plus first/second moments shaped like the
/// parameters they track.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamSet<T>) -> Self {
        let zeros = |p: &ParamSet<T>| p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamW {
            config,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    /// Restores saved state; every moment must match its parameter's shape.
    pub fn from_state(
        config: AdamWConfig,
        params: &ParamSet<T>,
        step: u64,
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
    ) -> Result<Self> {
        let ok = m.len() == params.len()
            && v.len() == params.len()
            && params
                .tensors()
                .iter()
                .zip(m.iter().zip(&v))
                .all(|(p, (a, b))| p.shape() == a.shape() && p.shape() == b.shape());
        if !ok {
            return Err(AutodiffError::invalid("adamw", "moment shapes do not match parameters"));
        }
        Ok(AdamW { config, step, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Zeroes the moments of one slot, e.g. after the parameter was reset.
    pub fn reset_slot(&mut self, i: usize) {
        for x in self.m[i].data_mut() {
            *x = T::zero();
        }
        for x in self.v[i].data_mut() {
            *x = T::zero();
        }
    }

    /// Clips `grads`, then applies one AdamW update at fractional `epoch`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &mut [Tensor<T>], epoch: f64) -> Result<StepOutcome> {
        if grads.len() != params.len() {
            return Err(AutodiffError::invalid("adamw", "one gradient per parameter required"));
        }
        for (p, g) in params.tensors().iter().zip(grads.iter()) {
            if p.shape() != g.shape() {
                return Err(AutodiffError::shapes("adamw", &[p.shape(), g.shape()]));
            }
        }
        if grads.iter().any(|g| !g.is_finite()) {
            log::warn!("adamw: non-finite gradient at step {}; update skipped", self.step);
            return Ok(StepOutcome::Skipped);
        }
        let grad_norm = clip_grad_norm(grads, self.config.clip_norm);
        self.step += 1;
        let c = &self.config;
        let lr = lr_schedule(epoch, c);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr_t, decay) = (T::lit(lr), T::lit(1.0 - lr * c.weight_decay));
        let (bc1, bc2, eps) = (T::lit(bc1), T::lit(bc2), T::lit(c.eps));
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(i).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] = p[j] * decay - lr_t * mh / (vh.sqrt() + eps);
            }
        }
        Ok(StepOutcome::Applied { lr, grad_norm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> AdamWConfig {
        AdamWConfig {
            lr_max: 1e-2,
            lr_min: 1e-4,
            warmup_epochs: 5.0,
            total_epochs: 50.0,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn schedule_endpoints() {
        let c = cfg();
        assert_eq!(lr_schedule(0.0, &c), 0.0);
        assert!((lr_schedule(5.0, &c) - 1e-2).abs() < 1e-15);
        assert!((lr_schedule(50.0, &c) - 1e-4).abs() < 1e-15);
        assert!((lr_schedule(2.5, &c) - 5e-3).abs() < 1e-15);
    }

    #[test]
    fn schedule_is_nonincreasing_after_warmup() {
        let c = cfg();
        let mut prev = lr_schedule(5.0, &c);
        for i in 1..=450 {
            let lr = lr_schedule(5.0 + i as f64 * 0.1, &c);
            assert!(lr <= prev + 1e-18);
            prev = lr;
        }
    }

    #[test]
    fn clipping_scales_by_ratio() {
        let mut g = vec![Tensor::from_vec(vec![6.0f64, 8.0])];
        let n = clip_grad_norm(&mut g, 1.0);
        assert_eq!(n, 10.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        assert!((g[0].data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut p = ParamSet::new();
        p.push("w", Tensor::from_vec(vec![1.5f64, -2.0]));
        let before = p.clone();
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..cfg()
            },
            &p,
        );
        let mut g = vec![Tensor::zeros(&[2])];
        opt.step(&mut p, &mut g, 10.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut p = ParamSet::new();
        p.push("w", Tensor::from_vec(vec![1.0f64]));
        let before = p.clone();
        let mut opt = AdamW::new(cfg(), &p);
        let mut g = vec![Tensor::from_vec(vec![f64::NAN])];
        assert_eq!(opt.step(&mut p, &mut g, 10.0).unwrap(), StepOutcome::Skipped);
        assert_eq!(p, before);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn clipped_gradient_feeds_moments() {
        // Norm-10 gradient clipped to norm 1 must produce the same update as
        // feeding the pre-scaled gradient directly.
        let mut p1 = ParamSet::new();
        p1.push("w", Tensor::from_vec(vec![0.0f64, 0.0]));
        let mut p2 = p1.clone();
        let mut o1 = AdamW::new(cfg(), &p1);
        let mut o2 = AdamW::new(
            AdamWConfig {
                clip_norm: 0.0,
                ..cfg()
            },
            &p2,
        );
        let mut g1 = vec![Tensor::from_vec(vec![6.0, 8.0])];
        let mut g2 = vec![Tensor::from_vec(vec![0.6, 0.8])];
        o1.step(&mut p1, &mut g1, 10.0).unwrap();
        o2.step(&mut p2, &mut g2, 10.0).unwrap();
        for (a, b) in g1[0].data().iter().zip(g2[0].data()) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in p1.get(0).data().iter().zip(p2.get(0).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
