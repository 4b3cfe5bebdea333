//! Pipeline topology and per-step routing between replicas of adjacent
//! stages.
//!
//! Every stage boundary gets a permutation of replica indices for each
//! routing period. Because the map is a bijection, each replica of the next
//! stage receives exactly one microbatch per step. Backward passes replay the
//! [`PathRecord`] collected during forward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, StreamTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingMode {
    #[default]
    Random,
    Fixed,
}

/// `S` stages, each replicated `R` times. Worker ids are `stage · R + replica`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineTopology {
    num_stages: usize,
    replicas: usize,
}

impl PipelineTopology {
    pub fn new(num_stages: usize, replicas: usize) -> Result<Self> {
        if num_stages == 0 || replicas == 0 {
            return Err(Error::InvalidParameter(
                "topology needs at least one stage and one replica".into(),
            ));
        }
        Ok(PipelineTopology {
            num_stages,
            replicas,
        })
    }

    pub fn num_stages(&self) -> usize {
        self.num_stages
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn num_workers(&self) -> usize {
        self.num_stages * self.replicas
    }

    pub fn worker_id(&self, stage: usize, replica: usize) -> usize {
        debug_assert!(stage < self.num_stages && replica < self.replicas);
        stage * self.replicas + replica
    }

    /// `(stage, replica)` of a worker.
    pub fn locate(&self, worker: usize) -> Option<(usize, usize)> {
        (worker < self.num_workers()).then(|| (worker / self.replicas, worker % self.replicas))
    }

    /// Worker ids of every replica of `stage`, in replica order.
    pub fn stage_workers(&self, stage: usize) -> Vec<usize> {
        (0..self.replicas).map(|r| self.worker_id(stage, r)).collect()
    }
}

/// Permutations used at each stage boundary for one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutePlan {
    step: usize,
    boundaries: Vec<Vec<usize>>,
}

impl RoutePlan {
    pub fn identity(topology: &PipelineTopology, step: usize) -> Self {
        RoutePlan {
            step,
            boundaries: vec![(0..topology.replicas()).collect(); topology.num_stages() - 1],
        }
    }

    pub fn from_permutations(step: usize, boundaries: Vec<Vec<usize>>) -> Result<Self> {
        for (b, perm) in boundaries.iter().enumerate() {
            let mut seen = vec![false; perm.len()];
            for &p in perm {
                if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                    return Err(Error::Routing(format!(
                        "boundary {b} is not a permutation: {perm:?}"
                    )));
                }
            }
        }
        Ok(RoutePlan { step, boundaries })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn boundaries(&self) -> &[Vec<usize>] {
        &self.boundaries
    }

    /// Follows the plan from a first-stage replica to the last stage.
    pub fn trace(&self, microbatch: usize, first_replica: usize) -> PathRecord {
        let mut hops = Vec::with_capacity(self.boundaries.len() + 1);
        let mut r = first_replica;
        hops.push((0, r));
        for (b, perm) in self.boundaries.iter().enumerate() {
            r = perm[r];
            hops.push((b + 1, r));
        }
        PathRecord { microbatch, hops }
    }
}

/// Draws one permutation per stage boundary. Fixed mode always returns the
/// identity and leaves `rng` untouched.
pub fn sample_route_plan(
    topology: &PipelineTopology,
    step: usize,
    mode: RoutingMode,
    rng: &mut RngStream,
) -> RoutePlan {
    match mode {
        RoutingMode::Fixed => RoutePlan::identity(topology, step),
        RoutingMode::Random => RoutePlan {
            step,
            boundaries: (0..topology.num_stages() - 1)
                .map(|_| rng.permutation(topology.replicas()))
                .collect(),
        },
    }
}

/// Plan for `step` drawn from a stream keyed by `(seed, step / period)`, so
/// plans are reproducible without replaying earlier steps.
pub fn plan_for_step(
    topology: &PipelineTopology,
    step: usize,
    period: usize,
    mode: RoutingMode,
    seed: u64,
) -> RoutePlan {
    let epoch = (step / period.max(1)) as u64;
    let mut rng = RngStream::keyed(seed, StreamTag::Routing, &[epoch]);
    sample_route_plan(topology, step, mode, &mut rng)
}

/// Destination replica in `stage + 1` for output of `(stage, replica)`.
pub fn route_forward(plan: &RoutePlan, stage: usize, replica: usize) -> Result<usize> {
    let perm = plan.boundaries.get(stage).ok_or_else(|| {
        Error::Routing(format!("stage {stage} has no next stage"))
    })?;
    perm.get(replica)
        .copied()
        .ok_or_else(|| Error::Routing(format!("replica {replica} out of range")))
}

/// Stages and replicas one microbatch visited during forward.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathRecord {
    microbatch: usize,
    hops: Vec<(usize, usize)>,
}

impl PathRecord {
    pub fn new(microbatch: usize, hops: Vec<(usize, usize)>) -> Result<Self> {
        if hops.iter().enumerate().any(|(i, &(s, _))| s != i) {
            return Err(Error::Routing(
                "path must visit stages 0, 1, ... in order".into(),
            ));
        }
        Ok(PathRecord { microbatch, hops })
    }

    pub fn microbatch(&self) -> usize {
        self.microbatch
    }

    pub fn hops(&self) -> &[(usize, usize)] {
        &self.hops
    }

    pub fn replica_at(&self, stage: usize) -> Option<usize> {
        self.hops.get(stage).map(|&(_, r)| r)
    }
}

/// Replica at `stage − 1` that sent this microbatch forward.
pub fn route_backward(record: &PathRecord, stage: usize) -> Result<usize> {
    if stage == 0 {
        return Err(Error::Routing("stage 0 has no upstream stage".into()));
    }
    if record.replica_at(stage).is_none() {
        return Err(Error::Routing(format!(
            "microbatch {} never reached stage {stage}",
            record.microbatch
        )));
    }
    Ok(record.hops[stage - 1].1)
}
