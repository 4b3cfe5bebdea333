use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Vector};

/// Inner learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Linear ramp from zero over `warmup_steps`, then cosine decay down to
    /// `floor_fraction · lr` at `total_steps`.
    WarmupCosine {
        warmup_steps: usize,
        total_steps: usize,
        floor_fraction: f64,
    },
}

impl Schedule {
    pub fn lr(&self, base: f64, step: usize) -> f64 {
        match *self {
            Schedule::Constant => base,
            Schedule::WarmupCosine {
                warmup_steps,
                total_steps,
                floor_fraction,
            } => {
                if step < warmup_steps {
                    return base * step as f64 / warmup_steps as f64;
                }
                let span = total_steps.saturating_sub(warmup_steps).max(1) as f64;
                let progress = ((step - warmup_steps) as f64 / span).min(1.0);
                let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
                base * (floor_fraction + (1.0 - floor_fraction) * cosine)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Schedule::WarmupCosine {
            warmup_steps,
            total_steps,
            floor_fraction,
        } = *self
        {
            if !(floor_fraction > 0.0 && floor_fraction <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "floor_fraction must lie in (0, 1], got {floor_fraction}"
                )));
            }
            if warmup_steps > total_steps {
                return Err(Error::InvalidParameter(format!(
                    "warmup ({warmup_steps}) exceeds total steps ({total_steps})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum InnerMethod {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl InnerMethod {
    pub fn adam() -> Self {
        InnerMethod::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerOptConfig {
    pub method: InnerMethod,
    /// Base inner learning rate ω.
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub schedule: Schedule,
    /// Drop Adam moments whenever an outer step resets the fast weights.
    pub reset_adam_on_outer: bool,
}

impl InnerOptConfig {
    pub fn sgd(lr: f64) -> Self {
        InnerOptConfig {
            method: InnerMethod::Sgd,
            lr,
            clip_norm: None,
            schedule: Schedule::Constant,
            reset_adam_on_outer: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "inner lr must be positive, got {}",
                self.lr
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "clip_norm must be positive, got {c}"
                )));
            }
        }
        if let InnerMethod::Adam { beta1, beta2, eps } = self.method {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::InvalidParameter(
                    "adam needs 0 ≤ beta1, beta2 < 1 and eps > 0".into(),
                ));
            }
        }
        self.schedule.validate()
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.schedule.lr(self.lr, step)
    }
}

/// Scales `grad` down to `max_norm` when its L2 norm exceeds it.
pub fn clip_gradient(grad: &[f64], max_norm: f64) -> Vector {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter().map(|g| g * s).collect()
    } else {
        Vector::from(grad.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vector,
    v: Vector,
    t: u64,
}

impl AdamState {
    fn new(dim: usize) -> Self {
        AdamState {
            m: Vector::zeros(dim),
            v: Vector::zeros(dim),
            t: 0,
        }
    }
}

/// One data-parallel replica of one pipeline stage.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub id: usize,
    /// Slow weights φ.
    pub phi: Vector,
    /// Fast weights θ.
    pub theta: Vector,
    /// Outer momentum δ.
    pub delta: Vector,
    adam: Option<AdamState>,
    pub rng: RngStream,
}

impl WorkerState {
    pub fn new(id: usize, init: Vector, rng: RngStream) -> Self {
        let dim = init.dim();
        WorkerState {
            id,
            phi: init.clone(),
            theta: init,
            delta: Vector::zeros(dim),
            adam: None,
            rng,
        }
    }

    pub fn dim(&self) -> usize {
        self.phi.dim()
    }

    pub fn adam_state(&self) -> Option<&AdamState> {
        self.adam.as_ref()
    }

    pub(crate) fn reset_inner_state(&mut self) {
        self.adam = None;
    }

    /// Advances θ by one inner step with the scheduled learning rate.
    pub fn inner_step(&mut self, grad: &[f64], cfg: &InnerOptConfig, step: usize) -> Result<()> {
        if grad.len() != self.dim() {
            return Err(Error::shape(
                format!("gradient of dimension {}", self.dim()),
                grad.len(),
            ));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                worker: self.id,
                step,
            });
        }
        let clipped;
        let g: &[f64] = match cfg.clip_norm {
            Some(c) => {
                clipped = clip_gradient(grad, c);
                &clipped
            }
            None => grad,
        };
        let lr = cfg.lr_at(step);
        match cfg.method {
            InnerMethod::Sgd => self.theta.axpy(-lr, g),
            InnerMethod::Adam { beta1, beta2, eps } => {
                let dim = self.dim();
                let st = self.adam.get_or_insert_with(|| AdamState::new(dim));
                st.t += 1;
                let bc1 = 1.0 - beta1.powi(st.t as i32);
                let bc2 = 1.0 - beta2.powi(st.t as i32);
                for (((th, m), v), &gi) in self
                    .theta
                    .iter_mut()
                    .zip(st.m.iter_mut())
                    .zip(st.v.iter_mut())
                    .zip(g)
                {
                    *m = beta1 * *m + (1.0 - beta1) * gi;
                    *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *th -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        if !self.theta.is_finite() {
            return Err(Error::NonFinite {
                worker: self.id,
                step,
            });
        }
        Ok(())
    }
}
