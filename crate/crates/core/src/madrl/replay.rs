use rand::Rng;
use serde::{Deserialize, Serialize};

/// One joint transition. Vectors are flattened per agent in index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience<T> {
    pub obs: Vec<T>,
    pub actions: Vec<T>,
    pub rewards: Vec<T>,
    pub next_obs: Vec<T>,
}

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<Experience<T>>,
    next: usize,
    pushed: u64,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            next: 0,
            pushed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of pushes, including overwritten entries.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, e: Experience<T>) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushed += 1;
    }

    pub fn get(&self, i: usize) -> Option<&Experience<T>> {
        self.items.get(i)
    }

    /// `batch` indices drawn uniformly from the stored entries.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..batch)
            .map(|_| rng.gen_range(0..self.items.len()))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Experience<T>> {
        self.sample_indices(batch, rng)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(v: f64) -> Experience<f64> {
        Experience {
            obs: vec![v],
            actions: vec![],
            rewards: vec![v],
            next_obs: vec![v],
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(exp(i as f64));
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.pushed(), 5);
        let mut held: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().obs[0]).collect();
        held.sort_by(f64::total_cmp);
        assert_eq!(held, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn empty_buffer_samples_nothing() {
        let b: ReplayBuffer<f64> = ReplayBuffer::new(4);
        assert!(b.sample(8, &mut ChaCha8Rng::seed_from_u64(0)).is_empty());
    }
}
