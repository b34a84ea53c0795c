//! Fixed-capacity replay buffer with uniform sampling.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{LearnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Network-space action: the policy output plus exploration noise,
    /// without the residual base.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    /// Gain matrix, kept only when the networks have a conv front end.
    pub gains: Option<Arc<DMatrix<f64>>>,
}

/// Ring buffer: once full, each push overwrites the oldest transition.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: Vec::new(), next: 0 }
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// `n` slot indices drawn uniformly with replacement.
    pub fn sample_indices(&self, rng: &mut impl Rng, n: usize) -> Result<Vec<usize>> {
        if self.items.len() < n || self.items.is_empty() {
            return Err(LearnError::BufferUnderflow { have: self.items.len(), need: n.max(1) });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Result<Vec<&Transition>> {
        Ok(self.sample_indices(rng, n)?.into_iter().map(|i| &self.items[i]).collect())
    }
}
