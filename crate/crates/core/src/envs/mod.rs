//! Sampled environments and their exact tabular models.
//!
//! Every environment can emit both sampled transitions (`step`) and the
//! exact `TabularMdp` it is drawn from (`mdp`), so Monte-Carlo estimators
//! can be checked against closed-form solutions on the same dynamics.

use std::collections::VecDeque;

use rand::{Rng, RngCore};

use crate::error::{GrapeError, Result};
use crate::mdp::TabularMdp;

mod frozenlake;
mod nchain;

pub use frozenlake::{frozenlake_mdp, FrozenLakeEnv, LAKE_GOAL, LAKE_START, LAKE_STATES};
pub use nchain::{nchain_mdp, NChainEnv, StartState, NCHAIN_CENTER, NCHAIN_GOAL, NCHAIN_STATES};

/// A finite episodic environment with known tabular dynamics.
pub trait Env {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Current state.
    fn state(&self) -> usize;
    /// Whether the current episode has finished.
    fn done(&self) -> bool;
    /// Start a fresh episode and return the initial state.
    fn reset(&mut self, rng: &mut dyn RngCore) -> usize;
    /// Advance one step; returns `(next_state, reward, done)`. Stepping a
    /// finished episode is an error.
    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<(usize, f64, bool)>;
    /// The exact model of these dynamics, with expected one-step rewards.
    fn mdp(&self, gamma: f64) -> Result<TabularMdp>;
}

/// One sampled interaction, tagged with the behavior probability of the
/// action taken so off-policy corrections can be formed later.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub x: usize,
    pub a: usize,
    pub r: f64,
    pub y: usize,
    /// Behavior probability `mu(a|x)` at the time the action was taken.
    pub mu_a: f64,
    /// True when this transition ended the episode.
    pub d: bool,
}

/// Bounded FIFO store of transitions supporting contiguous-window sampling.
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(GrapeError::Buffer("capacity must be positive".into()));
        }
        Ok(ReplayBuffer { capacity, items: VecDeque::with_capacity(capacity.min(1 << 20)) })
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

    /// Append one transition, evicting the oldest when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// A uniformly random contiguous window of `n` stored transitions, in
    /// storage order. Windows may span episode boundaries; consumers cut
    /// bootstrapping at the terminal flag.
    pub fn contiguous(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<Transition>> {
        if n == 0 {
            return Err(GrapeError::Buffer("window length must be positive".into()));
        }
        if self.items.len() < n {
            return Err(GrapeError::Buffer(format!(
                "window of {n} requested but only {} transitions stored",
                self.items.len()
            )));
        }
        let start = rng.random_range(0..=(self.items.len() - n));
        Ok((start..start + n).map(|i| self.items[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::substream;

    fn t(x: usize) -> Transition {
        Transition { x, a: 0, r: 0.0, y: x + 1, mu_a: 0.5, d: false }
    }

    #[test]
    fn buffer_evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            buf.push(t(i));
        }
        assert_eq!(buf.len(), 3);
        let mut rng = substream(401, &[0]);
        let window = buf.contiguous(3, &mut rng).unwrap();
        assert_eq!(window[0].x, 2);
        assert_eq!(window[2].x, 4);
    }

    #[test]
    fn contiguous_windows_are_in_storage_order() {
        let mut buf = ReplayBuffer::new(100).unwrap();
        for i in 0..50 {
            buf.push(t(i));
        }
        let mut rng = substream(402, &[0]);
        for _ in 0..200 {
            let w = buf.contiguous(10, &mut rng).unwrap();
            for k in 1..w.len() {
                assert_eq!(w[k].x, w[k - 1].x + 1);
            }
        }
    }

    #[test]
    fn contiguous_start_covers_full_range() {
        let mut buf = ReplayBuffer::new(16).unwrap();
        for i in 0..16 {
            buf.push(t(i));
        }
        let mut rng = substream(403, &[0]);
        let mut seen = [false; 9];
        for _ in 0..2000 {
            let w = buf.contiguous(8, &mut rng).unwrap();
            seen[w[0].x] = true;
        }
        assert!(seen.iter().all(|&s| s), "all window offsets should occur");
    }

    #[test]
    fn buffer_errors() {
        assert!(ReplayBuffer::new(0).is_err());
        let mut buf = ReplayBuffer::new(4).unwrap();
        buf.push(t(0));
        let mut rng = substream(404, &[0]);
        assert!(buf.contiguous(2, &mut rng).is_err());
        assert!(buf.contiguous(0, &mut rng).is_err());
    }
}
