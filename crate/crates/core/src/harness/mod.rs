//! Experiment orchestration: configuration, the training loop, metrics files
//! and cross-method reports.

mod config;
mod stats;
mod trainer;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{
    ExperimentConfig, InnerKind, InnerSection, OuterSection, ResolvedConfig, ScheduleKind,
    WorkloadConfig,
};
pub use stats::{
    median, normalize_to_max, pearson, relative_convergence_diff, replica_weight_std, weight_std,
};
pub use trainer::{MetricsRecord, Trainer};

use crate::analytic::{predict, AnalyticConfig, AnalyticPrediction};
use crate::error::{Error, Result};
use crate::latency::{compare_wallclock, FleetSpec};
use crate::numerics::Vector;
use crate::optimizers::{InnerMethod, OuterMethod, Schedule};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn metrics_jsonl(records: &[MetricsRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Long-format `(step, value, series)` rows for plotting.
pub fn metrics_csv(records: &[MetricsRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidParameter(format!("csv: {e}"));
    w.write_record(["step", "value", "series"]).map_err(csv_err)?;
    for r in records {
        let step = r.step.to_string();
        let mut row = |value: f64, series: &str| {
            w.write_record([step.as_str(), &value.to_string(), series])
        };
        row(r.val_loss, "val_loss").map_err(csv_err)?;
        row(r.lr, "lr").map_err(csv_err)?;
        row(r.sim_time, "sim_time").map_err(csv_err)?;
        for (i, l) in r.loss_per_replica.iter().enumerate() {
            row(*l, &format!("loss_replica_{i}")).map_err(csv_err)?;
        }
        for (s, v) in r.replica_std.iter().enumerate() {
            row(*v, &format!("replica_std_stage_{s}")).map_err(csv_err)?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::InvalidParameter(format!("csv: {e}")))
}

/// Path of the CSV file written next to a metrics file.
pub fn sidecar_path(metrics: &Path) -> PathBuf {
    metrics.with_extension("csv")
}

pub fn train(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    Trainer::new(cfg.resolve()?)?.run()
}

/// Trains and writes the JSONL metrics file at `out` plus its CSV sidecar.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<MetricsRecord>> {
    let records = train(cfg)?;
    write_atomic(out, &metrics_jsonl(&records)?)?;
    write_atomic(&sidecar_path(out), &metrics_csv(&records)?)?;
    Ok(records)
}

/// `cfg` with the outer method replaced. Method-specific settings are reset
/// to that method's defaults unless `method` is already the configured one.
pub fn with_method(cfg: &ExperimentConfig, method: OuterMethod) -> ExperimentConfig {
    let mut c = cfg.clone();
    if c.outer.method != method {
        c.outer.method = method;
        c.outer.alpha = None;
        c.outer.gamma = None;
        c.outer.interval = None;
    }
    c
}

#[derive(Debug, Clone, Serialize)]
pub struct WallclockSummary {
    pub world_size: usize,
    pub inner_steps: usize,
    pub outer_steps: usize,
    pub diloco_total: f64,
    pub noloco_total: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub steps: Vec<usize>,
    /// Validation loss per method on the shared step axis.
    pub val_loss: BTreeMap<String, Vec<f64>>,
    pub final_sim_time: BTreeMap<String, f64>,
    /// `(diloco − noloco) / sync-dp` per step.
    pub relative_convergence_diff: Vec<f64>,
    /// Correlation of NoLoCo's first-stage replica spread with the inner lr.
    pub std_lr_pearson: Option<f64>,
    pub latency: Option<WallclockSummary>,
}

/// Runs NoLoCo, DiLoCo and synchronous data parallel on the same data,
/// initialisation and noise streams.
pub fn compare(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    let methods = [OuterMethod::Noloco, OuterMethod::Diloco, OuterMethod::SyncDp];
    let mut runs = BTreeMap::new();
    let mut noloco_interval = 0;
    for m in methods {
        let c = with_method(cfg, m);
        let resolved = c.resolve()?;
        if m == OuterMethod::Noloco {
            noloco_interval = resolved.outer.interval;
        }
        runs.insert(m.name().to_string(), Trainer::new(resolved)?.run()?);
    }
    let steps: Vec<usize> = runs["noloco"].iter().map(|r| r.step).collect();
    let curve = |name: &str| -> Vec<f64> { runs[name].iter().map(|r| r.val_loss).collect() };
    let rel = relative_convergence_diff(&curve("diloco"), &curve("noloco"), &curve("sync-dp"))?;
    let noloco = &runs["noloco"];
    let stds: Vec<f64> = noloco.iter().map(|r| r.replica_std[0]).collect();
    let lrs: Vec<f64> = noloco.iter().map(|r| r.lr).collect();
    let std_lr_pearson = pearson(&stds, &lrs).ok();
    let latency = if cfg.replicas >= 2 && cfg.replicas % 2 == 0 {
        let outer_steps = (cfg.steps / noloco_interval).max(1);
        let fleet = FleetSpec::new(cfg.replicas, noloco_interval, outer_steps)?;
        let w = compare_wallclock(&fleet, cfg.seed)?;
        Some(WallclockSummary {
            world_size: cfg.replicas,
            inner_steps: noloco_interval,
            outer_steps,
            diloco_total: w.diloco_total,
            noloco_total: w.noloco_total,
            ratio: w.ratio,
        })
    } else {
        None
    };
    Ok(ComparisonReport {
        steps,
        val_loss: methods
            .iter()
            .map(|m| (m.name().to_string(), curve(m.name())))
            .collect(),
        final_sim_time: runs
            .iter()
            .map(|(k, v)| (k.clone(), v.last().map_or(0.0, |r| r.sim_time)))
            .collect(),
        relative_convergence_diff: rel,
        std_lr_pearson,
        latency,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub batch_size: usize,
    pub method: String,
    pub final_val_loss: f64,
}

/// Final validation loss per method for each per-replica batch size.
pub fn batch_size_sweep(cfg: &ExperimentConfig, batch_sizes: &[usize]) -> Result<Vec<SweepRow>> {
    if !matches!(cfg.workload, WorkloadConfig::Mlp { .. }) {
        return Err(Error::config("workload", "batch-size sweeps need the mlp workload"));
    }
    if batch_sizes.is_empty() {
        return Err(Error::config("sweep", "no batch sizes given"));
    }
    let mut rows = Vec::new();
    for &b in batch_sizes {
        let mut c = cfg.clone();
        if let WorkloadConfig::Mlp { batch_size, .. } = &mut c.workload {
            *batch_size = b;
        }
        for m in [OuterMethod::Noloco, OuterMethod::Diloco, OuterMethod::SyncDp] {
            let records = train(&with_method(&c, m))?;
            rows.push(SweepRow {
                batch_size: b,
                method: m.name().to_string(),
                final_val_loss: records.last().map_or(f64::NAN, |r| r.val_loss),
            });
        }
    }
    Ok(rows)
}

/// Closed-form predictions for a quadratic NoLoCo run with constant-rate SGD.
/// The problem instance is the one `train` would draw for the same seed.
pub fn analyze(cfg: &ExperimentConfig) -> Result<AnalyticPrediction> {
    let resolved = cfg.resolve()?;
    let init = match resolved.workload {
        WorkloadConfig::Quadratic { init, .. } => init,
        WorkloadConfig::Mlp { .. } => {
            return Err(Error::config("workload", "analysis needs the quadratic workload"))
        }
    };
    if resolved.outer.method != OuterMethod::Noloco {
        return Err(Error::config("outer.method", "analysis covers noloco only"));
    }
    if !matches!(resolved.inner.method, InnerMethod::Sgd) {
        return Err(Error::config("inner.method", "analysis needs sgd"));
    }
    if !matches!(resolved.inner.schedule, Schedule::Constant) || resolved.inner.clip_norm.is_some() {
        return Err(Error::config(
            "inner.schedule",
            "analysis needs a constant rate without clipping",
        ));
    }
    let outer = resolved.outer.clone();
    let inner_lr = resolved.inner.lr;
    let horizon = (resolved.steps / outer.interval).max(1);
    let trainer = Trainer::new(resolved)?;
    let problem = trainer
        .quadratic_problem()
        .ok_or_else(|| Error::config("workload", "no quadratic problem"))?
        .clone();
    let phi0 = Vector::filled(problem.dim(), init);
    predict(
        &AnalyticConfig {
            problem,
            omega: inner_lr,
            m: outer.interval,
            alpha: outer.alpha,
            beta: outer.beta,
            gamma: outer.gamma,
            n: outer.group_size,
            horizon,
        },
        &phi0,
    )
}
