use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{RngStream, StreamTag};

/// Partition of one stage's replicas into outer-step groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupAssignment {
    pub outer_step: usize,
    /// Each group sorted by worker id.
    pub groups: Vec<Vec<usize>>,
}

impl GroupAssignment {
    pub fn group_of(&self, worker: usize) -> Option<&[usize]> {
        self.groups
            .iter()
            .find(|g| g.contains(&worker))
            .map(Vec::as_slice)
    }
}

/// Uniform random partition of `replicas` into blocks of `n`: shuffle, then
/// chunk.
pub fn sample_groups(
    replicas: &[usize],
    n: usize,
    outer_step: usize,
    rng: &mut RngStream,
) -> Result<GroupAssignment> {
    if n == 0 || replicas.len() % n != 0 {
        return Err(Error::Config {
            field: "outer.group_size".into(),
            message: format!(
                "group size {n} must divide the replica count {}",
                replicas.len()
            ),
        });
    }
    let perm = rng.permutation(replicas.len());
    let groups = perm
        .chunks(n)
        .map(|c| {
            let mut g: Vec<usize> = c.iter().map(|&i| replicas[i]).collect();
            g.sort_unstable();
            g
        })
        .collect();
    Ok(GroupAssignment { outer_step, groups })
}

/// Per-stage group sampler that keeps the next outer step's assignment ready
/// before the current one is consumed.
#[derive(Debug, Clone)]
pub struct GroupSchedule {
    seed: u64,
    stage: usize,
    replicas: Vec<usize>,
    n: usize,
    next: GroupAssignment,
}

impl GroupSchedule {
    pub fn new(seed: u64, stage: usize, replicas: Vec<usize>, n: usize) -> Result<Self> {
        let next = Self::draw(seed, stage, &replicas, n, 0)?;
        Ok(GroupSchedule {
            seed,
            stage,
            replicas,
            n,
            next,
        })
    }

    fn draw(
        seed: u64,
        stage: usize,
        replicas: &[usize],
        n: usize,
        outer_step: usize,
    ) -> Result<GroupAssignment> {
        let mut rng = RngStream::keyed(seed, StreamTag::Groups, &[stage as u64, outer_step as u64]);
        sample_groups(replicas, n, outer_step, &mut rng)
    }

    /// Assignment that the next call to [`GroupSchedule::advance`] returns.
    pub fn peek(&self) -> &GroupAssignment {
        &self.next
    }

    /// Returns the prefetched assignment and samples the following one.
    pub fn advance(&mut self) -> Result<GroupAssignment> {
        let following = Self::draw(
            self.seed,
            self.stage,
            &self.replicas,
            self.n,
            self.next.outer_step + 1,
        )?;
        Ok(std::mem::replace(&mut self.next, following))
    }
}
