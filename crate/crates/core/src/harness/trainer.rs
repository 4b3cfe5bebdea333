use serde::{Deserialize, Serialize};

use super::config::{ResolvedConfig, WorkloadConfig};
use super::stats::weight_std;
use crate::error::{Error, Result};
use crate::latency::LatencyModel;
use crate::models::{mse_loss, QuadraticProblem, RegressionTask, StagedMlp};
use crate::numerics::{RngStream, StreamTag, Vector};
use crate::optimizers::{
    diloco_outer_step, noloco_outer_step, sync_dp_step, GroupSchedule, OuterMethod, WorkerState,
};
use crate::routing::{plan_for_step, route_backward, PipelineTopology};

/// One metrics line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub outer_step: usize,
    pub loss_per_replica: Vec<f64>,
    pub val_loss: f64,
    /// Cross-replica spread of φ, one entry per stage.
    pub replica_std: Vec<f64>,
    pub lr: f64,
    pub sim_time: f64,
}

enum Task {
    Quadratic(QuadraticProblem),
    Mlp { net: StagedMlp, data: RegressionTask },
}

/// The training loop: inner steps on every worker, outer steps at the
/// configured interval, and a simulated clock per pipeline replica.
pub struct Trainer {
    cfg: ResolvedConfig,
    topo: PipelineTopology,
    task: Task,
    /// `workers[stage][replica]`.
    workers: Vec<Vec<WorkerState>>,
    schedules: Vec<GroupSchedule>,
    clocks: Vec<f64>,
    clock_rngs: Vec<RngStream>,
    step_latency: LatencyModel,
    step: usize,
    outer_step: usize,
    last_losses: Vec<f64>,
}

impl Trainer {
    pub fn new(cfg: ResolvedConfig) -> Result<Self> {
        let seed = cfg.seed;
        let topo = PipelineTopology::new(cfg.stages, cfg.replicas)?;
        let (task, init): (Task, Vec<Vector>) = match &cfg.workload {
            WorkloadConfig::Quadratic {
                dim,
                eig_min,
                eig_max,
                noise_var,
                init,
            } => {
                let mut rng = RngStream::keyed(seed, StreamTag::Problem, &[]);
                let p = QuadraticProblem::random(*dim, *eig_min, *eig_max, *noise_var, &mut rng)?;
                (Task::Quadratic(p), vec![Vector::filled(*dim, *init)])
            }
            w @ WorkloadConfig::Mlp { .. } => {
                let dims = w.mlp_dims().expect("mlp workload");
                let net = StagedMlp::evenly(&dims, cfg.stages)?;
                let data = RegressionTask::new(
                    &net,
                    w.task_shape(cfg.replicas).expect("mlp workload"),
                    seed,
                )?;
                let init = net.init_params(&mut RngStream::keyed(seed, StreamTag::Init, &[]));
                (Task::Mlp { net, data }, init)
            }
        };
        let workers: Vec<Vec<WorkerState>> = (0..cfg.stages)
            .map(|s| {
                (0..cfg.replicas)
                    .map(|r| {
                        let id = topo.worker_id(s, r);
                        let rng = RngStream::keyed(seed, StreamTag::Noise, &[id as u64]);
                        WorkerState::new(id, init[s].clone(), rng)
                    })
                    .collect()
            })
            .collect();
        let schedules = if cfg.outer.method == OuterMethod::Noloco {
            (0..cfg.stages)
                .map(|s| GroupSchedule::new(seed, s, topo.stage_workers(s), cfg.outer.group_size))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let clock_rngs = (0..cfg.replicas)
            .map(|r| RngStream::keyed(seed, StreamTag::Latency, &[r as u64]))
            .collect();
        Ok(Trainer {
            topo,
            task,
            workers,
            schedules,
            clocks: vec![0.0; cfg.replicas],
            clock_rngs,
            step_latency: LatencyModel::new(1.0, 0.5)?,
            step: 0,
            outer_step: 0,
            last_losses: vec![f64::NAN; cfg.replicas],
            cfg,
        })
    }

    pub fn config(&self) -> &ResolvedConfig {
        &self.cfg
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn outer_steps_done(&self) -> usize {
        self.outer_step
    }

    pub fn stage_workers(&self, stage: usize) -> &[WorkerState] {
        &self.workers[stage]
    }

    pub fn quadratic_problem(&self) -> Option<&QuadraticProblem> {
        match &self.task {
            Task::Quadratic(p) => Some(p),
            Task::Mlp { .. } => None,
        }
    }

    fn numerical(&self, e: Error) -> Error {
        match e {
            Error::NonFinite { worker, step } => Error::Numerical {
                message: format!("non-finite value on worker {worker} at step {step}"),
                last_good_step: (self.step > 0).then_some(self.step),
            },
            other => other,
        }
    }

    /// Per-worker gradients and per-replica losses for the current step.
    fn gradients(&mut self) -> Result<(Vec<Vec<Vector>>, Vec<f64>)> {
        let k = self.step;
        let r_count = self.cfg.replicas;
        match &self.task {
            Task::Quadratic(p) => {
                let mut grads = Vec::with_capacity(r_count);
                let mut losses = Vec::with_capacity(r_count);
                for w in self.workers[0].iter_mut() {
                    let c = p.sample_c(&mut w.rng);
                    losses.push(p.loss(&w.theta, &c)?);
                    grads.push(p.grad(&w.theta, &c)?);
                }
                Ok((vec![grads], losses))
            }
            Task::Mlp { net, data } => {
                let batches = data.step_batches(k);
                let plan = plan_for_step(&self.topo, k, 1, self.cfg.routing, self.cfg.seed);
                let stages = net.stages();
                let mut grads: Vec<Vec<Option<Vector>>> = vec![vec![None; r_count]; stages.len()];
                let mut losses = vec![0.0; r_count];
                for (mb, batch) in batches.iter().enumerate() {
                    let path = plan.trace(mb, mb);
                    let mut h = batch.inputs.clone();
                    let mut caches = Vec::with_capacity(stages.len());
                    for (s, spec) in stages.iter().enumerate() {
                        let rep = path.replica_at(s).expect("path covers every stage");
                        let (out, cache) = spec.forward(&self.workers[s][rep].theta, &h)?;
                        caches.push(cache);
                        h = out;
                    }
                    let (loss, mut g) = mse_loss(&h, &batch.targets)?;
                    losses[mb] = loss;
                    let mut rep = path.replica_at(stages.len() - 1).expect("last stage");
                    for s in (0..stages.len()).rev() {
                        let cache = caches.pop().expect("one cache per stage");
                        let (g_in, pg) = stages[s].backward(&self.workers[s][rep].theta, cache, &g)?;
                        if grads[s][rep].replace(pg).is_some() {
                            return Err(Error::Routing(format!(
                                "worker ({s}, {rep}) received two microbatches at step {k}"
                            )));
                        }
                        g = g_in;
                        if s > 0 {
                            rep = route_backward(&path, s)?;
                        }
                    }
                }
                let grads = grads
                    .into_iter()
                    .map(|stage| {
                        stage
                            .into_iter()
                            .collect::<Option<Vec<_>>>()
                            .ok_or_else(|| Error::Routing(format!("idle worker at step {k}")))
                    })
                    .collect::<Result<_>>()?;
                Ok((grads, losses))
            }
        }
    }

    /// One inner step on every worker, followed by an outer step when due.
    pub fn step(&mut self) -> Result<()> {
        let k = self.step;
        let (grads, losses) = self.gradients().map_err(|e| self.numerical(e))?;
        if let Some(r) = losses.iter().position(|l| !l.is_finite()) {
            return Err(Error::Numerical {
                message: format!("non-finite loss on replica {r} at step {k}"),
                last_good_step: (k > 0).then_some(k),
            });
        }
        let method = self.cfg.outer.method;
        let inner = self.cfg.inner;
        let mut result = Ok(());
        for (stage, g) in self.workers.iter_mut().zip(&grads) {
            result = if method == OuterMethod::SyncDp {
                sync_dp_step(stage, g, &inner, k)
            } else {
                stage
                    .iter_mut()
                    .zip(g)
                    .try_for_each(|(w, gi)| {
                        w.inner_step(gi, &inner, k)?;
                        if method == OuterMethod::None {
                            w.phi.clone_from(&w.theta);
                        }
                        Ok(())
                    })
            };
            if result.is_err() {
                break;
            }
        }
        result.map_err(|e| self.numerical(e))?;
        self.last_losses = losses;

        for (c, rng) in self.clocks.iter_mut().zip(self.clock_rngs.iter_mut()) {
            *c += self.step_latency.sample(rng);
        }
        if method == OuterMethod::SyncDp {
            barrier(&mut self.clocks, &(0..self.cfg.replicas).collect::<Vec<_>>());
        }
        self.step += 1;
        if matches!(method, OuterMethod::Noloco | OuterMethod::Diloco)
            && self.step % self.cfg.outer.interval == 0
        {
            self.outer()?;
        }
        Ok(())
    }

    fn outer(&mut self) -> Result<()> {
        let r_count = self.cfg.replicas;
        let outer = self.cfg.outer;
        for (s, stage) in self.workers.iter_mut().enumerate() {
            match outer.method {
                OuterMethod::Noloco => {
                    let assignment = self.schedules[s].advance()?;
                    for group in &assignment.groups {
                        let mut members: Vec<&mut WorkerState> =
                            stage.iter_mut().filter(|w| group.contains(&w.id)).collect();
                        noloco_outer_step(&mut members, &outer)?;
                    }
                    if s == 0 {
                        for group in &assignment.groups {
                            let reps: Vec<usize> = group.iter().map(|id| id % r_count).collect();
                            barrier(&mut self.clocks, &reps);
                        }
                    }
                }
                OuterMethod::Diloco => {
                    diloco_outer_step(stage, &outer)?;
                    if s == 0 {
                        barrier(&mut self.clocks, &(0..r_count).collect::<Vec<_>>());
                    }
                }
                OuterMethod::SyncDp | OuterMethod::None => {}
            }
            if self.cfg.inner.reset_adam_on_outer {
                stage.iter_mut().for_each(WorkerState::reset_inner_state);
            }
            if let Some(w) = stage.iter().find(|w| !w.phi.is_finite()) {
                return Err(Error::Numerical {
                    message: format!(
                        "non-finite slow weights on worker {} at outer step {}",
                        w.id, self.outer_step
                    ),
                    last_good_step: Some(self.step - 1),
                });
            }
        }
        self.outer_step += 1;
        Ok(())
    }

    fn validation_loss(&self) -> Result<f64> {
        let r_count = self.cfg.replicas;
        let mut total = 0.0;
        for r in 0..r_count {
            total += match &self.task {
                Task::Quadratic(p) => p.expected_loss(&self.workers[0][r].theta)?,
                Task::Mlp { net, data } => {
                    let params: Vec<Vector> =
                        self.workers.iter().map(|st| st[r].theta.clone()).collect();
                    let v = data.validation();
                    mse_loss(&net.forward(&params, &v.inputs)?, &v.targets)?.0
                }
            };
        }
        Ok(total / r_count as f64)
    }

    /// Cross-replica spread of φ per stage; zero with a single replica.
    pub fn replica_std(&self) -> Result<Vec<f64>> {
        self.workers
            .iter()
            .map(|stage| {
                if stage.len() < 2 {
                    return Ok(0.0);
                }
                let phis: Vec<&[f64]> = stage.iter().map(|w| &w.phi[..]).collect();
                weight_std(&phis)
            })
            .collect()
    }

    pub fn record(&self) -> Result<MetricsRecord> {
        Ok(MetricsRecord {
            step: self.step,
            outer_step: self.outer_step,
            loss_per_replica: self.last_losses.clone(),
            val_loss: self.validation_loss()?,
            replica_std: self.replica_std()?,
            lr: self.cfg.inner.lr_at(self.step.saturating_sub(1)),
            sim_time: self.clocks.iter().copied().fold(0.0, f64::max),
        })
    }

    /// Runs every remaining step, recording metrics at the configured cadence
    /// and after the final step.
    pub fn run(&mut self) -> Result<Vec<MetricsRecord>> {
        let mut records = Vec::new();
        while self.step < self.cfg.steps {
            self.step()?;
            if self.step % self.cfg.metrics_every == 0 || self.step == self.cfg.steps {
                records.push(self.record()?);
            }
        }
        Ok(records)
    }
}

fn barrier(clocks: &mut [f64], members: &[usize]) {
    let t = members.iter().map(|&r| clocks[r]).fold(f64::NEG_INFINITY, f64::max);
    for &r in members {
        clocks[r] = t;
    }
}
