//! Ring-buffer experience replay with uniform sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One transition of the environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer; pushes beyond capacity overwrite the oldest
/// entry. Appends require exclusive access; sampling is read-only.
pub struct ReplayBuffer {
    data: Vec<Experience>,
    capacity: usize,
    next: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        ReplayBuffer { data: Vec::with_capacity(capacity.min(1 << 20)), capacity, next: 0, inserted: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of pushes, including overwritten ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, experience: Experience) {
        if self.data.len() < self.capacity {
            self.data.push(experience);
        } else {
            self.data[self.next] = experience;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    /// Uniform sample with replacement across the current contents.
    pub fn sample<'a>(&'a self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<&'a Experience>> {
        if self.data.len() < batch_size {
            return Err(Error::BufferUnderfilled { available: self.data.len(), requested: batch_size });
        }
        Ok((0..batch_size).map(|_| &self.data[rng.random_range(0..self.data.len())]).collect())
    }
}
