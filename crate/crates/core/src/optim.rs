//! Adam with bias correction, plus the epoch-granular step-decay schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub config: AdamConfig,
}

impl AdamState {
    /// Fresh state for tensors of the given lengths.
    pub fn new(shapes: &[usize], config: AdamConfig) -> Self {
        Self {
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            config,
        }
    }

    /// One update over every tensor; the step counter advances once.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} tensors", self.m.len()),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != self.m[k].len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("tensor {k} of length {}", self.m[k].len()),
                    format!("params {} / grads {}", p.len(), g.len()),
                ));
            }
        }
        if lr.is_nan() || lr <= 0.0 {
            return Err(Error::InvalidHyperParameter(format!(
                "learning rate must be > 0, got {lr}"
            )));
        }

        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let t = self.t.min(i32::MAX as u64) as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(
    state: &mut AdamState,
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    lr: f64,
) -> Result<()> {
    state.step(params, grads, lr)
}

/// Piecewise-constant learning rate: `base_lr · decay_factor^⌊epoch / decay_every⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub total_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            decay_factor: 0.1,
            decay_every: 20,
            total_epochs: 50,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::InvalidHyperParameter(format!(
                "base_lr must be > 0, got {}",
                self.base_lr
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::InvalidHyperParameter(
                "decay_every must be >= 1".into(),
            ));
        }
        if !(self.decay_factor.is_finite() && self.decay_factor > 0.0) {
            return Err(Error::InvalidHyperParameter(format!(
                "decay_factor must be > 0, got {}",
                self.decay_factor
            )));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        let decays = (epoch / self.decay_every) as i32;
        Ok(self.base_lr * self.decay_factor.powi(decays))
    }
}

pub fn lr_at_epoch(sched: &LrSchedule, epoch: usize) -> Result<f64> {
    sched.lr_at_epoch(epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut st = AdamState::new(&[3], AdamConfig::default());
        st.step(&mut [&mut p], &[&[0.0; 3]], 1e-3).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_is_about_lr_times_sign() {
        let cfg = AdamConfig::default();
        let lr = 1e-3;
        for g in [5.0, -0.01, 1e-3] {
            let mut p = vec![0.0];
            let mut st = AdamState::new(&[1], cfg);
            st.step(&mut [&mut p], &[&[g]], lr).unwrap();
            let expect = lr / (1.0 + cfg.eps / g.abs());
            assert_relative_eq!(p[0].abs(), expect, max_relative = 1e-12);
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn three_steps_on_quadratic_match_scalar_reference() {
        // f(x) = 0.5 (x - 3)^2, gradient x - 3
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
        let mut x_ref = 0.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = x_ref - 3.0;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x_ref -= lr * mh / (vh.sqrt() + eps);
        }
        let mut x = vec![0.0];
        let mut st = AdamState::new(&[1], AdamConfig::default());
        for _ in 0..3 {
            let g = x[0] - 3.0;
            st.step(&mut [&mut x], &[&[g]], lr).unwrap();
        }
        assert!((x[0] - x_ref).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let mut st = AdamState::new(&[2, 1], AdamConfig::default());
        let mut a = vec![0.0; 2];
        assert!(matches!(
            st.step(&mut [&mut a], &[&[0.0, 0.0]], 0.1),
            Err(Error::ShapeMismatch { .. })
        ));
        let mut b = vec![0.0; 2];
        assert!(matches!(
            st.step(&mut [&mut a, &mut b], &[&[0.0, 0.0], &[0.0, 0.0]], 0.1),
            Err(Error::ShapeMismatch { .. })
        ));
        assert_eq!(st.t, 0);
    }

    #[test]
    fn schedule_examples() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at_epoch(0).unwrap(), 1e-4);
        assert_relative_eq!(s.lr_at_epoch(20).unwrap(), 1e-5, max_relative = 1e-12);
        assert_relative_eq!(s.lr_at_epoch(40).unwrap(), 1e-6, max_relative = 1e-12);
        let s = LrSchedule { base_lr: 5e-5, ..s };
        assert_eq!(s.lr_at_epoch(19).unwrap(), 5e-5);
        assert!(matches!(
            s.lr_at_epoch(50),
            Err(Error::EpochOutOfRange {
                epoch: 50,
                total: 50
            })
        ));
    }

    #[test]
    fn schedule_has_ceil_total_over_every_levels() {
        for (total, every) in [(50, 20), (40, 20), (7, 1), (10, 3)] {
            let s = LrSchedule {
                total_epochs: total,
                decay_every: every,
                ..Default::default()
            };
            let mut levels: Vec<f64> = (0..total).map(|e| s.lr_at_epoch(e).unwrap()).collect();
            levels.dedup();
            assert_eq!(levels.len(), total.div_ceil(every));
        }
    }

    proptest! {
        #[test]
        fn step_never_exceeds_lr_over_one_minus_beta1(
            grads in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 1..40),
            lr in 1e-5f64..1e-1,
        ) {
            let cfg = AdamConfig::default();
            let bound = lr / (1.0 - cfg.beta1);
            let mut st = AdamState::new(&[4], cfg);
            let mut p = vec![0.0; 4];
            for g in &grads {
                let before = p.clone();
                st.step(&mut [&mut p], &[g], lr).unwrap();
                for (a, b) in p.iter().zip(&before) {
                    prop_assert!((a - b).abs() <= bound * (1.0 + 1e-12));
                }
            }
            let mut q = vec![0.0; 4];
            let mut st2 = AdamState::new(&[4], cfg);
            for g in &grads {
                st2.step(&mut [&mut q], &[g], lr).unwrap();
            }
            prop_assert_eq!(p, q);
            prop_assert!(st.v[0].iter().all(|&v| v >= 0.0));
        }
    }
}
