use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::TaskShape;
use crate::optimizers::{
    default_gamma, InnerMethod, InnerOptConfig, OuterMethod, OuterOptConfig, Schedule,
};
use crate::routing::RoutingMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum WorkloadConfig {
    Quadratic {
        #[serde(default = "d_dim")]
        dim: usize,
        #[serde(default = "d_eig_min")]
        eig_min: f64,
        #[serde(default = "d_eig_max")]
        eig_max: f64,
        #[serde(default = "d_one")]
        noise_var: f64,
        /// Every coordinate of the shared starting point.
        #[serde(default = "d_one")]
        init: f64,
    },
    Mlp {
        #[serde(default = "d_input")]
        input_dim: usize,
        #[serde(default = "d_hidden")]
        hidden_dim: usize,
        #[serde(default = "d_output")]
        output_dim: usize,
        #[serde(default = "d_layers")]
        layers: usize,
        #[serde(default = "d_batch")]
        batch_size: usize,
        #[serde(default = "d_samples")]
        samples: usize,
        #[serde(default = "d_validation")]
        validation_samples: usize,
        #[serde(default = "d_noise_std")]
        noise_std: f64,
    },
}

fn d_dim() -> usize {
    8
}
fn d_eig_min() -> f64 {
    0.1
}
fn d_eig_max() -> f64 {
    1.0
}
fn d_one() -> f64 {
    1.0
}
fn d_input() -> usize {
    8
}
fn d_hidden() -> usize {
    32
}
fn d_output() -> usize {
    4
}
fn d_layers() -> usize {
    4
}
fn d_batch() -> usize {
    16
}
fn d_samples() -> usize {
    4096
}
fn d_validation() -> usize {
    256
}
fn d_noise_std() -> f64 {
    0.1
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig::Mlp {
            input_dim: d_input(),
            hidden_dim: d_hidden(),
            output_dim: d_output(),
            layers: d_layers(),
            batch_size: d_batch(),
            samples: d_samples(),
            validation_samples: d_validation(),
            noise_std: d_noise_std(),
        }
    }
}

impl WorkloadConfig {
    /// Layer widths of the MLP workload.
    pub fn mlp_dims(&self) -> Option<Vec<usize>> {
        match *self {
            WorkloadConfig::Mlp {
                input_dim,
                hidden_dim,
                output_dim,
                layers,
                ..
            } => {
                let mut dims = vec![input_dim];
                dims.extend(std::iter::repeat_n(hidden_dim, layers.saturating_sub(1)));
                dims.push(output_dim);
                Some(dims)
            }
            WorkloadConfig::Quadratic { .. } => None,
        }
    }

    pub fn task_shape(&self, replicas: usize) -> Option<TaskShape> {
        match *self {
            WorkloadConfig::Mlp {
                batch_size,
                samples,
                validation_samples,
                noise_std,
                ..
            } => Some(TaskShape {
                n_samples: samples,
                n_validation: validation_samples,
                batch_size,
                replicas,
                noise_std,
            }),
            WorkloadConfig::Quadratic { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    WarmupCosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerSection {
    pub method: InnerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    pub schedule: ScheduleKind,
    pub warmup_steps: usize,
    pub floor_fraction: f64,
    pub reset_adam_on_outer: bool,
}

impl Default for InnerSection {
    fn default() -> Self {
        InnerSection {
            method: InnerKind::Adam,
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
            schedule: ScheduleKind::WarmupCosine,
            warmup_steps: 100,
            floor_fraction: 0.1,
            reset_adam_on_outer: false,
        }
    }
}

/// Unset `alpha`, `gamma` and `interval` take per-method defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterSection {
    pub method: OuterMethod,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub gamma: Option<f64>,
    pub group_size: usize,
    pub interval: Option<usize>,
    pub allow_unstable_gamma: bool,
}

impl Default for OuterSection {
    fn default() -> Self {
        OuterSection {
            method: OuterMethod::Noloco,
            alpha: None,
            beta: 0.7,
            gamma: None,
            group_size: 2,
            interval: None,
            allow_unstable_gamma: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub workload: WorkloadConfig,
    pub stages: usize,
    pub replicas: usize,
    pub inner: InnerSection,
    pub outer: OuterSection,
    pub routing: RoutingMode,
    pub steps: usize,
    pub seed: u64,
    pub metrics_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            workload: WorkloadConfig::default(),
            stages: 2,
            replicas: 4,
            inner: InnerSection::default(),
            outer: OuterSection::default(),
            routing: RoutingMode::Random,
            steps: 2500,
            seed: 0,
            metrics_every: 50,
        }
    }
}

/// Validated configuration with every default resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub workload: WorkloadConfig,
    pub stages: usize,
    pub replicas: usize,
    pub inner: InnerOptConfig,
    pub outer: OuterOptConfig,
    pub routing: RoutingMode,
    pub steps: usize,
    pub seed: u64,
    pub metrics_every: usize,
}

fn cfg_err(field: &str, message: impl Into<String>) -> Error {
    Error::config(field, message)
}

/// Re-labels a validation error from a sub-config with `field`.
fn at(field: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter(m) => cfg_err(field, m),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            cfg_err(if path == "." { "<root>" } else { &path }, e.into_inner().to_string())
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        if self.replicas == 0 {
            return Err(cfg_err("replicas", "must be at least 1"));
        }
        if self.stages == 0 {
            return Err(cfg_err("stages", "must be at least 1"));
        }
        if self.steps == 0 {
            return Err(cfg_err("steps", "must be at least 1"));
        }
        if self.metrics_every == 0 {
            return Err(cfg_err("metrics_every", "must be at least 1"));
        }
        match &self.workload {
            WorkloadConfig::Quadratic {
                dim,
                eig_min,
                eig_max,
                noise_var,
                init,
            } => {
                if self.stages != 1 {
                    return Err(cfg_err("stages", "the quadratic workload has a single stage"));
                }
                if *dim == 0 {
                    return Err(cfg_err("workload.dim", "must be at least 1"));
                }
                if !(*eig_min > 0.0 && eig_max >= eig_min) {
                    return Err(cfg_err("workload.eig_min", "need 0 < eig_min ≤ eig_max"));
                }
                if !(*noise_var >= 0.0) {
                    return Err(cfg_err("workload.noise_var", "must be non-negative"));
                }
                if !init.is_finite() {
                    return Err(cfg_err("workload.init", "must be finite"));
                }
            }
            WorkloadConfig::Mlp {
                layers,
                batch_size,
                samples,
                input_dim,
                hidden_dim,
                output_dim,
                validation_samples,
                noise_std,
            } => {
                if *layers < self.stages {
                    return Err(cfg_err(
                        "workload.layers",
                        format!("{layers} layers cannot fill {} stages", self.stages),
                    ));
                }
                if *input_dim == 0 || *hidden_dim == 0 || *output_dim == 0 {
                    return Err(cfg_err("workload", "layer widths must be positive"));
                }
                if *batch_size == 0 {
                    return Err(cfg_err("workload.batch_size", "must be at least 1"));
                }
                if *samples < batch_size * self.replicas {
                    return Err(cfg_err(
                        "workload.samples",
                        "pool must hold one batch per replica",
                    ));
                }
                if *validation_samples == 0 {
                    return Err(cfg_err("workload.validation_samples", "must be at least 1"));
                }
                if !(*noise_std >= 0.0) {
                    return Err(cfg_err("workload.noise_std", "must be non-negative"));
                }
            }
        }

        let i = &self.inner;
        let schedule = match i.schedule {
            ScheduleKind::Constant => Schedule::Constant,
            ScheduleKind::WarmupCosine => Schedule::WarmupCosine {
                warmup_steps: i.warmup_steps,
                total_steps: self.steps,
                floor_fraction: i.floor_fraction,
            },
        };
        let inner = InnerOptConfig {
            method: match i.method {
                InnerKind::Sgd => InnerMethod::Sgd,
                InnerKind::Adam => InnerMethod::Adam {
                    beta1: i.beta1,
                    beta2: i.beta2,
                    eps: i.eps,
                },
            },
            lr: i.lr,
            clip_norm: i.clip_norm,
            schedule,
            reset_adam_on_outer: i.reset_adam_on_outer,
        };
        inner.validate().map_err(|e| at("inner", e))?;

        let o = &self.outer;
        let (alpha_default, interval_default) = match o.method {
            OuterMethod::Diloco => (0.3, 100),
            _ => (0.5, 50),
        };
        let alpha = o.alpha.unwrap_or(alpha_default);
        let interval = o.interval.unwrap_or(interval_default);
        let gamma = match (o.method, o.gamma) {
            (_, Some(g)) => g,
            (OuterMethod::Noloco, None) => default_gamma(alpha, o.group_size.max(2))
                .map_err(|e| at("outer.alpha", e))?,
            _ => 0.0,
        };
        let outer = OuterOptConfig {
            method: o.method,
            alpha,
            beta: o.beta,
            gamma,
            group_size: o.group_size,
            interval,
            allow_unstable_gamma: o.allow_unstable_gamma,
        };
        outer.validate(self.replicas)?;
        if matches!(o.method, OuterMethod::Noloco | OuterMethod::Diloco) && self.steps < interval {
            return Err(cfg_err(
                "steps",
                format!("{} steps never reach the outer interval {interval}", self.steps),
            ));
        }
        Ok(ResolvedConfig {
            workload: self.workload.clone(),
            stages: self.stages,
            replicas: self.replicas,
            inner,
            outer,
            routing: self.routing,
            steps: self.steps,
            seed: self.seed,
            metrics_every: self.metrics_every,
        })
    }
}
