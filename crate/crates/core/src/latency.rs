//! Communication-time models: tree all-reduce against pairwise averaging, and
//! the blocking overhead of global versus pairwise barriers over a training
//! run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{erf, lognormal_unchecked, RngStream, StreamTag};

/// Log-normal latency, `exp(g)` with `g ~ N(mu, sigma2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub mu: f64,
    pub sigma2: f64,
}

impl LatencyModel {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) || !mu.is_finite() || !sigma2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "latency needs finite mu and sigma2 ≥ 0, got ({mu}, {sigma2})"
            )));
        }
        Ok(LatencyModel { mu, sigma2 })
    }

    /// Mean latency `exp(mu + sigma2 / 2)`.
    pub fn t_c(&self) -> f64 {
        (self.mu + self.sigma2 / 2.0).exp()
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        lognormal_unchecked(self.mu, self.sigma2.sqrt(), rng)
    }
}

fn log2_exact(n: usize) -> Result<u32> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::InvalidParameter(format!(
            "world size must be a power of two ≥ 2, got {n}"
        )));
    }
    Ok(n.trailing_zeros())
}

/// `2 · t_c · log₂ n`.
pub fn tree_allreduce_time(n: usize, t_c: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "all-reduce needs at least 2 workers, got {n}"
        )));
    }
    Ok(2.0 * t_c * (n as f64).log2())
}

/// Expected maximum of two iid log-normal times.
pub fn expected_pair_max(mu: f64, sigma2: f64) -> Result<f64> {
    let m = LatencyModel::new(mu, sigma2)?;
    Ok((1.0 + erf(sigma2.sqrt() / 2.0)) * m.t_c())
}

/// One sampled reduce-then-broadcast over a perfect binary tree with
/// `2^levels` leaves.
pub fn sample_tree_allreduce(levels: u32, model: &LatencyModel, rng: &mut RngStream) -> f64 {
    let mut ready = vec![0.0f64; 1usize << levels];
    while ready.len() > 1 {
        ready = ready
            .chunks(2)
            .map(|c| (c[0] + model.sample(rng)).max(c[1] + model.sample(rng)))
            .collect();
    }
    let mut arrival = ready;
    for _ in 0..levels {
        arrival = arrival
            .iter()
            .flat_map(|&t| [t + model.sample(rng), t + model.sample(rng)])
            .collect();
    }
    arrival.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// One sampled pairwise averaging: both partners wait for the slower message,
/// twice.
pub fn sample_pair_average(model: &LatencyModel, rng: &mut RngStream) -> f64 {
    2.0 * model.sample(rng).max(model.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub ratio: f64,
    pub std_error: f64,
    pub tree_mean: f64,
    pub pair_mean: f64,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte-Carlo ratio of mean tree all-reduce time to mean pairwise averaging
/// time, with a delta-method standard error.
pub fn mc_reduce_ratio(n: usize, model: &LatencyModel, trials: usize, seed: u64) -> Result<RatioEstimate> {
    let levels = log2_exact(n)?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let mut rng = RngStream::keyed(seed, StreamTag::Latency, &[n as u64]);
    let mut tree = Vec::with_capacity(trials);
    let mut pair = Vec::with_capacity(trials);
    for _ in 0..trials {
        tree.push(sample_tree_allreduce(levels, model, &mut rng));
        pair.push(sample_pair_average(model, &mut rng));
    }
    let (tm, tse) = mean_and_se(&tree);
    let (pm, pse) = mean_and_se(&pair);
    let ratio = tm / pm;
    let std_error = ratio * ((tse / tm).powi(2) + (pse / pm).powi(2)).sqrt();
    Ok(RatioEstimate {
        ratio,
        std_error,
        tree_mean: tm,
        pair_mean: pm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub world_size: usize,
    pub inner_steps: usize,
    pub outer_steps: usize,
    pub step_latency: LatencyModel,
    /// Transfer latency. Not charged by the blocking simulation, which only
    /// measures barrier waiting.
    pub message_latency: LatencyModel,
}

impl FleetSpec {
    pub fn new(world_size: usize, inner_steps: usize, outer_steps: usize) -> Result<Self> {
        let f = FleetSpec {
            world_size,
            inner_steps,
            outer_steps,
            step_latency: LatencyModel::new(1.0, 0.5)?,
            message_latency: LatencyModel::new(1.0, 0.5)?,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.world_size < 2 || self.world_size % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "world size must be even and at least 2, got {}",
                self.world_size
            )));
        }
        if self.inner_steps == 0 || self.outer_steps == 0 {
            return Err(Error::InvalidParameter(
                "inner and outer step counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BarrierMethod {
    Diloco,
    Noloco,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WallclockResult {
    pub diloco_total: f64,
    pub noloco_total: f64,
    pub diloco_finish: Vec<f64>,
    pub noloco_finish: Vec<f64>,
    /// DiLoCo total over NoLoCo total.
    pub ratio: f64,
}

/// Per-worker clock after every outer step, `outer_steps × world_size`.
///
/// Inner-phase durations come from per-worker streams keyed only by the
/// seed, so both methods see the same step times.
pub fn wallclock_history(fleet: &FleetSpec, method: BarrierMethod, seed: u64) -> Result<Vec<Vec<f64>>> {
    fleet.validate()?;
    let n = fleet.world_size;
    let mut step_rngs: Vec<RngStream> = (0..n)
        .map(|w| RngStream::keyed(seed, StreamTag::Latency, &[1, w as u64]))
        .collect();
    let mut pairing = RngStream::keyed(seed, StreamTag::Pairing, &[]);
    let mut clock = vec![0.0f64; n];
    let mut history = Vec::with_capacity(fleet.outer_steps);
    for _ in 0..fleet.outer_steps {
        for (c, rng) in clock.iter_mut().zip(step_rngs.iter_mut()) {
            *c += (0..fleet.inner_steps)
                .map(|_| fleet.step_latency.sample(rng))
                .sum::<f64>();
        }
        match method {
            BarrierMethod::Diloco => {
                let t = clock.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                clock.iter_mut().for_each(|c| *c = t);
            }
            BarrierMethod::Noloco => {
                let perm = pairing.permutation(n);
                for p in perm.chunks(2) {
                    let t = clock[p[0]].max(clock[p[1]]);
                    clock[p[0]] = t;
                    clock[p[1]] = t;
                }
            }
        }
        history.push(clock.clone());
    }
    Ok(history)
}

pub fn wallclock_sim(fleet: &FleetSpec, method: BarrierMethod, seed: u64) -> Result<Vec<f64>> {
    Ok(wallclock_history(fleet, method, seed)?
        .pop()
        .expect("at least one outer step"))
}

pub fn compare_wallclock(fleet: &FleetSpec, seed: u64) -> Result<WallclockResult> {
    let diloco_finish = wallclock_sim(fleet, BarrierMethod::Diloco, seed)?;
    let noloco_finish = wallclock_sim(fleet, BarrierMethod::Noloco, seed)?;
    let total = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let diloco_total = total(&diloco_finish);
    let noloco_total = total(&noloco_finish);
    Ok(WallclockResult {
        diloco_total,
        noloco_total,
        ratio: diloco_total / noloco_total,
        diloco_finish,
        noloco_finish,
    })
}
