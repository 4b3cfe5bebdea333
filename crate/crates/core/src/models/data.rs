use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream, StreamTag, Vector};

use super::mlp::StagedMlp;

/// One minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::shape(
                format!("{} target rows", inputs.rows()),
                targets.rows(),
            ));
        }
        Ok(Batch { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Synthetic teacher-network regression data.
///
/// A fixed pool of `n_samples` training points is reshuffled every epoch and
/// cut into disjoint per-replica minibatches; a separate held-out batch is
/// never part of any shard.
#[derive(Debug, Clone)]
pub struct RegressionTask {
    teacher: Vec<Vector>,
    inputs: Matrix,
    targets: Matrix,
    validation: Batch,
    batch_size: usize,
    replicas: usize,
    seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct TaskShape {
    pub n_samples: usize,
    pub n_validation: usize,
    pub batch_size: usize,
    pub replicas: usize,
    pub noise_std: f64,
}

impl RegressionTask {
    pub fn new(net: &StagedMlp, shape: TaskShape, seed: u64) -> Result<Self> {
        let TaskShape {
            n_samples,
            n_validation,
            batch_size,
            replicas,
            noise_std,
        } = shape;
        if batch_size == 0 || replicas == 0 || n_validation == 0 {
            return Err(Error::InvalidParameter(
                "batch size, replica count and validation size must be positive".into(),
            ));
        }
        if n_samples < batch_size * replicas {
            return Err(Error::InvalidParameter(format!(
                "{n_samples} samples cannot fill one batch of {batch_size} for each of {replicas} replicas"
            )));
        }
        if !(noise_std >= 0.0) {
            return Err(Error::InvalidParameter("noise_std must be non-negative".into()));
        }
        let teacher = net.init_params(&mut RngStream::keyed(seed, StreamTag::Teacher, &[]));
        let mut rng = RngStream::keyed(seed, StreamTag::Data, &[u64::MAX]);
        let mut draw = |rows: usize| -> Result<(Matrix, Matrix)> {
            let x = Matrix::from_fn(rows, net.input_dim(), |_, _| rng.standard_normal());
            let clean = net.forward(&teacher, &x)?;
            let y = Matrix::from_fn(rows, net.output_dim(), |i, j| {
                clean[(i, j)] + noise_std * rng.standard_normal()
            });
            Ok((x, y))
        };
        let (inputs, targets) = draw(n_samples)?;
        let (vx, vy) = draw(n_validation)?;
        Ok(RegressionTask {
            teacher,
            inputs,
            targets,
            validation: Batch::new(vx, vy)?,
            batch_size,
            replicas,
            seed,
        })
    }

    pub fn teacher_params(&self) -> &[Vector] {
        &self.teacher
    }

    pub fn validation(&self) -> &Batch {
        &self.validation
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Minibatches each replica draws per pass over the pool.
    pub fn batches_per_epoch(&self) -> usize {
        self.inputs.rows() / (self.batch_size * self.replicas)
    }

    /// Pool indices of replica `replica`'s `k`-th minibatch.
    pub fn batch_indices(&self, replica: usize, k: usize) -> Vec<usize> {
        let per_epoch = self.batches_per_epoch();
        let epoch = k / per_epoch;
        let slot = k % per_epoch;
        let perm = RngStream::keyed(self.seed, StreamTag::Data, &[epoch as u64])
            .permutation(self.inputs.rows());
        let start = (slot * self.replicas + replica) * self.batch_size;
        perm[start..start + self.batch_size].to_vec()
    }

    pub fn batch(&self, replica: usize, k: usize) -> Result<Batch> {
        if replica >= self.replicas {
            return Err(Error::InvalidParameter(format!(
                "replica {replica} out of range ({} replicas)",
                self.replicas
            )));
        }
        Ok(self.gather(&self.batch_indices(replica, k)))
    }

    fn gather(&self, idx: &[usize]) -> Batch {
        let x = Matrix::from_fn(idx.len(), self.inputs.cols(), |i, j| self.inputs[(idx[i], j)]);
        let y = Matrix::from_fn(idx.len(), self.targets.cols(), |i, j| self.targets[(idx[i], j)]);
        Batch {
            inputs: x,
            targets: y,
        }
    }

    /// Every replica's minibatch for step `k`, sharing one epoch permutation.
    pub fn step_batches(&self, k: usize) -> Vec<Batch> {
        let per_epoch = self.batches_per_epoch();
        let epoch = k / per_epoch;
        let slot = k % per_epoch;
        let perm = RngStream::keyed(self.seed, StreamTag::Data, &[epoch as u64])
            .permutation(self.inputs.rows());
        (0..self.replicas)
            .map(|r| {
                let start = (slot * self.replicas + r) * self.batch_size;
                self.gather(&perm[start..start + self.batch_size])
            })
            .collect()
    }
}
