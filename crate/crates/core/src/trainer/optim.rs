//! Adam with Nesterov momentum, global-norm clipping and the one-cycle
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::encoder::Encoder;
use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clipping threshold.
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
        }
    }
}

/// Breakpoints of the one-cycle schedule as fractions of all steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OclrConfig {
    pub peak_lr: f64,
    pub final_lr: f64,
    /// The schedule starts (and returns to) `peak_lr / start_divisor`.
    pub start_divisor: f64,
    pub warmup_fraction: f64,
    pub anneal_fraction: f64,
}

impl Default for OclrConfig {
    fn default() -> Self {
        Self {
            peak_lr: 6e-4,
            final_lr: 1e-6,
            start_divisor: 10.0,
            warmup_fraction: 0.45,
            anneal_fraction: 0.9,
        }
    }
}

impl OclrConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.peak_lr > 0.0
            && self.final_lr >= 0.0
            && self.start_divisor >= 1.0
            && 0.0 < self.warmup_fraction
            && self.warmup_fraction < self.anneal_fraction
            && self.anneal_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!(
                "invalid learning-rate schedule {self:?}"
            )))
        }
    }

    /// Linear warmup from `peak / d` to `peak`, linear decay back to
    /// `peak / d`, then linear decay to `final_lr` at the last step.
    pub fn lr(&self, step: usize, total_steps: usize) -> Result<f64, TrainError> {
        if step > total_steps || total_steps == 0 {
            return Err(TrainError::StepOutOfRange { step, total_steps });
        }
        let x = step as f64 / total_steps as f64;
        let low = self.peak_lr / self.start_divisor;
        let lerp = |a: f64, b: f64, f: f64| a + (b - a) * f;
        Ok(if x <= self.warmup_fraction {
            lerp(low, self.peak_lr, x / self.warmup_fraction)
        } else if x <= self.anneal_fraction {
            lerp(
                self.peak_lr,
                low,
                (x - self.warmup_fraction) / (self.anneal_fraction - self.warmup_fraction),
            )
        } else {
            lerp(
                low,
                self.final_lr,
                (x - self.anneal_fraction) / (1.0 - self.anneal_fraction),
            )
        })
    }
}

/// One-cycle learning rate at `step` of `total_steps` with the default
/// breakpoints.
pub fn oclr_schedule(
    step: usize,
    total_steps: usize,
    peak_lr: f64,
    final_lr: f64,
) -> Result<f64, TrainError> {
    OclrConfig {
        peak_lr,
        final_lr,
        ..OclrConfig::default()
    }
    .lr(step, total_steps)
}

/// Schedule for runs started from a checkpoint: constant `lr` for the
/// first `hold_fraction` of steps, then linear decay to `final_lr`.
pub fn constant_then_decay(
    step: usize,
    total_steps: usize,
    lr: f64,
    final_lr: f64,
    hold_fraction: f64,
) -> Result<f64, TrainError> {
    if step > total_steps || total_steps == 0 {
        return Err(TrainError::StepOutOfRange { step, total_steps });
    }
    let x = step as f64 / total_steps as f64;
    Ok(if x <= hold_fraction {
        lr
    } else {
        lr + (final_lr - lr) * (x - hold_fraction) / (1.0 - hold_fraction)
    })
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NadamState {
    pub step: u64,
    pub m: Encoder,
    pub v: Encoder,
}

impl NadamState {
    pub fn new(params: &Encoder) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Moments for `params`, taking every tensor whose shape matches from
    /// `old` and zeros elsewhere.
    pub fn carry_over(params: &Encoder, old: &NadamState) -> Self {
        let mut st = Self::new(params);
        st.step = old.step;
        for (dst, src) in [(&mut st.m, &old.m), (&mut st.v, &old.v)] {
            if dst.layers.len() == src.layers.len() {
                for (d, s) in dst.layers.iter_mut().zip(&src.layers) {
                    if d.same_shape(s) {
                        d.clone_from(s);
                    }
                }
            }
            for (d, s) in dst.heads.iter_mut().zip(&src.heads) {
                if let (Some(d), Some(s)) = (d.as_mut(), s) {
                    if d.same_shape(s) {
                        d.clone_from(s);
                    }
                }
            }
        }
        st
    }

    /// One update with learning rate `lr` (Dozat's Nesterov-accelerated
    /// Adam, constant momentum).
    pub fn update(&mut self, params: &mut Encoder, grad: &Encoder, lr: f64, cfg: &OptimizerConfig) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc1_next = 1.0 - b1.powi(t + 1);
        let bc2 = 1.0 - b2.powi(t);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = b1 * m[i] / bc1_next + (1.0 - b1) * gi / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Scales `grad` so its global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grad: &mut Encoder, max_norm: f64) -> f64 {
    let norm = grad.norm();
    if norm > max_norm && norm > 0.0 {
        grad.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oclr_breakpoints() {
        let total = 1000;
        let lr = |s| oclr_schedule(s, total, 6e-4, 1e-6).unwrap();
        assert!((lr(0) - 6e-5).abs() < 1e-18);
        assert!((lr(450) - 6e-4).abs() < 1e-18);
        assert!((lr(900) - 6e-5).abs() < 1e-18);
        assert!((lr(1000) - 1e-6).abs() < 1e-18);
        assert!(lr(200) < lr(300) && lr(600) > lr(700));
        assert!(oclr_schedule(1001, total, 6e-4, 1e-6).is_err());
    }

    #[test]
    fn init_schedule() {
        assert_eq!(constant_then_decay(0, 100, 5e-5, 1e-6, 0.9).unwrap(), 5e-5);
        assert_eq!(constant_then_decay(90, 100, 5e-5, 1e-6, 0.9).unwrap(), 5e-5);
        assert!((constant_then_decay(100, 100, 5e-5, 1e-6, 0.9).unwrap() - 1e-6).abs() < 1e-18);
    }
}
