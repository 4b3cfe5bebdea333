use std::borrow::BorrowMut;

use serde::{Deserialize, Serialize};

use super::inner::{InnerOptConfig, WorkerState};
use crate::error::{Error, Result};
use crate::numerics::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuterMethod {
    Noloco,
    Diloco,
    SyncDp,
    None,
}

impl OuterMethod {
    pub fn name(&self) -> &'static str {
        match self {
            OuterMethod::Noloco => "noloco",
            OuterMethod::Diloco => "diloco",
            OuterMethod::SyncDp => "sync-dp",
            OuterMethod::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterOptConfig {
    pub method: OuterMethod,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub group_size: usize,
    /// Inner steps between outer updates.
    pub interval: usize,
    /// Skip the γ stability check, for divergence experiments.
    pub allow_unstable_gamma: bool,
}

impl OuterOptConfig {
    pub fn noloco(alpha: f64, beta: f64, n: usize, interval: usize) -> Result<Self> {
        Ok(OuterOptConfig {
            method: OuterMethod::Noloco,
            alpha,
            beta,
            gamma: default_gamma(alpha, n)?,
            group_size: n,
            interval,
            allow_unstable_gamma: false,
        })
    }

    pub fn diloco(alpha: f64, beta: f64, interval: usize) -> Self {
        OuterOptConfig {
            method: OuterMethod::Diloco,
            alpha,
            beta,
            gamma: 0.0,
            group_size: 0,
            interval,
            allow_unstable_gamma: false,
        }
    }

    pub fn validate(&self, replicas: usize) -> Result<()> {
        let bad = |field: &str, message: String| Error::Config {
            field: format!("outer.{field}"),
            message,
        };
        if self.interval == 0 {
            return Err(bad("interval", "must be at least 1".into()));
        }
        if matches!(self.method, OuterMethod::Noloco | OuterMethod::Diloco) {
            if !(0.0..1.0).contains(&self.alpha) {
                return Err(bad("alpha", format!("must lie in [0, 1), got {}", self.alpha)));
            }
            if !(self.beta > 0.0) || !self.beta.is_finite() {
                return Err(bad("beta", format!("must be positive, got {}", self.beta)));
            }
        }
        if self.method == OuterMethod::Noloco {
            let n = self.group_size;
            if n < 2 {
                return Err(bad("group_size", format!("must be at least 2, got {n}")));
            }
            if replicas % n != 0 {
                return Err(bad(
                    "group_size",
                    format!("{n} does not divide the replica count {replicas}"),
                ));
            }
            let (lo, hi) = gamma_bounds(self.alpha, n)?;
            if !self.allow_unstable_gamma && !(self.gamma > lo && self.gamma < hi) {
                return Err(bad(
                    "gamma",
                    format!("{} lies outside the stable interval ({lo}, {hi})", self.gamma),
                ));
            }
        }
        Ok(())
    }
}

/// Open interval of γ for which cross-replica variance stays bounded.
pub fn gamma_bounds(alpha: f64, n: usize) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "gamma bounds need group size ≥ 2, got {n}"
        )));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "momentum must lie in [0, 1), got {alpha}"
        )));
    }
    let k = n as f64 / (2.0 * (n as f64 - 1.0));
    Ok((k.sqrt() * alpha, (k * (2.0 + alpha * alpha)).sqrt()))
}

pub fn default_gamma(alpha: f64, n: usize) -> Result<f64> {
    let (lo, hi) = gamma_bounds(alpha, n)?;
    Ok(0.5 * (lo + hi))
}

/// Δ = θ − φ.
pub fn outer_gradient(state: &WorkerState) -> Vector {
    state
        .theta
        .iter()
        .zip(state.phi.iter())
        .map(|(t, p)| t - p)
        .collect()
}

fn check_dims<S: BorrowMut<WorkerState>>(group: &[S]) -> Result<usize> {
    let first = group
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty group".into()))?
        .borrow();
    let d = first.dim();
    for s in group {
        let s = s.borrow();
        for len in [s.phi.dim(), s.theta.dim(), s.delta.dim()] {
            if len != d {
                return Err(Error::shape(format!("dimension {d}"), len));
            }
        }
    }
    Ok(d)
}

fn mean_outer_gradient<S: BorrowMut<WorkerState>>(group: &[S], d: usize) -> Vec<f64> {
    let mut sum = vec![0.0; d];
    for s in group {
        let s = s.borrow();
        for ((acc, t), p) in sum.iter_mut().zip(s.theta.iter()).zip(s.phi.iter()) {
            *acc += t - p;
        }
    }
    let n = group.len() as f64;
    sum.iter().map(|x| x / n).collect()
}

fn finish<S: BorrowMut<WorkerState>>(group: &mut [S]) {
    for s in group {
        let s = s.borrow_mut();
        for (p, dl) in s.phi.iter_mut().zip(s.delta.iter()) {
            *p += dl;
        }
        s.theta.clone_from(&s.phi);
    }
}

/// Group-local outer step. Members must be passed in worker-id order; every
/// reduction runs in that order.
///
/// δ_i ← α δ_i + β·mean(Δ) − γ·(φ_i − mean(φ)), φ_i ← φ_i + δ_i, θ_i ← φ_i.
/// The consensus term is accumulated as (1/n)·Σ_j (φ_i − φ_j), which is exactly
/// zero when all φ agree.
pub fn noloco_outer_step<S: BorrowMut<WorkerState>>(
    group: &mut [S],
    cfg: &OuterOptConfig,
) -> Result<()> {
    let d = check_dims(group)?;
    let n = group.len();
    if cfg.group_size != 0 && n != cfg.group_size {
        return Err(Error::shape(format!("group of {}", cfg.group_size), n));
    }
    let mean_delta = mean_outer_gradient(group, d);
    let nf = n as f64;
    let consensus: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let pi = &group[i].borrow().phi;
            let mut acc = vec![0.0; d];
            for other in group.iter() {
                for ((a, x), y) in acc.iter_mut().zip(pi.iter()).zip(other.borrow().phi.iter()) {
                    *a += x - y;
                }
            }
            acc.iter().map(|a| a / nf).collect()
        })
        .collect();
    for (s, cons) in group.iter_mut().zip(&consensus) {
        let s = s.borrow_mut();
        for ((dl, md), c) in s.delta.iter_mut().zip(&mean_delta).zip(cons) {
            *dl = cfg.alpha * *dl + cfg.beta * md - cfg.gamma * c;
        }
    }
    finish(group);
    Ok(())
}

/// All-reduce outer step: every replica applies the same Nesterov update from
/// the mean outer gradient, so replicas holding identical φ and δ stay
/// identical.
pub fn diloco_outer_step<S: BorrowMut<WorkerState>>(
    states: &mut [S],
    cfg: &OuterOptConfig,
) -> Result<()> {
    let d = check_dims(states)?;
    let mean_delta = mean_outer_gradient(states, d);
    for s in states.iter_mut() {
        let s = s.borrow_mut();
        for (dl, md) in s.delta.iter_mut().zip(&mean_delta) {
            *dl = cfg.alpha * *dl + cfg.beta * md;
        }
    }
    finish(states);
    Ok(())
}

/// Applies the replica-mean gradient to every replica, keeping φ = θ.
pub fn sync_dp_step<S: BorrowMut<WorkerState>>(
    states: &mut [S],
    grads: &[Vector],
    cfg: &InnerOptConfig,
    step: usize,
) -> Result<()> {
    if grads.len() != states.len() {
        return Err(Error::shape(
            format!("{} gradients", states.len()),
            grads.len(),
        ));
    }
    let d = check_dims(states)?;
    let mut mean = vec![0.0; d];
    for (g, s) in grads.iter().zip(states.iter()) {
        if g.dim() != d {
            return Err(Error::shape(format!("gradient of dimension {d}"), g.dim()));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite {
                worker: s.borrow().id,
                step,
            });
        }
        for (m, x) in mean.iter_mut().zip(g.iter()) {
            *m += x;
        }
    }
    let r = grads.len() as f64;
    mean.iter_mut().for_each(|m| *m /= r);
    for s in states.iter_mut() {
        let s = s.borrow_mut();
        s.inner_step(&mean, cfg, step)?;
        s.phi.clone_from(&s.theta);
    }
    Ok(())
}
