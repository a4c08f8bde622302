use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rsd_autograd::Tensor;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Fixed-size shuffled batching. The ragged tail of every epoch is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub drop_last: bool,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl BatchPlan {
    pub fn new(batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::Plan(format!("batch size must be at least 2, got {batch_size}")));
        }
        Ok(Self {
            batch_size,
            seed,
            drop_last: true,
        })
    }

    fn check(&self, n: usize) -> Result<()> {
        if !self.drop_last {
            return Err(Error::Plan("ragged batches are not supported; drop_last must be true".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Plan(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if self.batch_size > n {
            return Err(Error::Plan(format!(
                "batch size {} exceeds dataset size {n}",
                self.batch_size
            )));
        }
        Ok(())
    }

    /// The shuffled order of `0..n` for `epoch`; each epoch reads its own
    /// stream of the seeded generator.
    pub fn permutation(&self, n: usize, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n / self.batch_size
    }

    /// Index groups for one epoch, each of exactly `batch_size`.
    pub fn index_batches(&self, n: usize, epoch: u64) -> Result<Vec<Vec<usize>>> {
        self.check(n)?;
        Ok(self
            .permutation(n, epoch)
            .chunks_exact(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect())
    }

    pub fn batches(&self, ds: &Dataset, epoch: u64) -> Result<Vec<Batch>> {
        Ok(self
            .index_batches(ds.len(), epoch)?
            .into_iter()
            .map(|indices| Batch {
                x: ds.gather(&indices),
                y: indices.iter().map(|&i| ds.labels[i]).collect(),
                indices,
            })
            .collect())
    }
}
