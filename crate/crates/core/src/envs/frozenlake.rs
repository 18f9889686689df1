//! The 8x8 frozen-lake gridworld.
//!
//! States are `row * 8 + col`. Actions: 0 = left, 1 = down, 2 = right,
//! 3 = up. On slippery ice the agent moves in the intended direction or one
//! of the two perpendicular directions, each with probability 1/3. Moves off
//! the grid leave the state unchanged. Holes and the goal are absorbing;
//! entering the goal pays 1.

use rand::{Rng, RngCore};

use crate::envs::Env;
use crate::error::{GrapeError, Result};
use crate::mdp::TabularMdp;

const SIZE: usize = 8;
pub const LAKE_STATES: usize = SIZE * SIZE;
pub const LAKE_START: usize = 0;
pub const LAKE_GOAL: usize = 63;

const MAP: [&str; SIZE] = [
    "SFFFFFFF",
    "FFFFFFFF",
    "FFFHFFFF",
    "FFFFFHFF",
    "FFFHFFFF",
    "FHHFFFHF",
    "FHFFHFHF",
    "FFFHFFFG",
];

fn tile(state: usize) -> u8 {
    MAP[state / SIZE].as_bytes()[state % SIZE]
}

fn is_absorbing(state: usize) -> bool {
    matches!(tile(state), b'H' | b'G')
}

/// Destination of a deterministic move, clamped at the grid edge.
fn slide(state: usize, dir: usize) -> usize {
    let (row, col) = (state / SIZE, state % SIZE);
    let (nr, nc) = match dir {
        0 => (row, col.saturating_sub(1)),
        1 => ((row + 1).min(SIZE - 1), col),
        2 => (row, (col + 1).min(SIZE - 1)),
        _ => (row.saturating_sub(1), col),
    };
    nr * SIZE + nc
}

pub struct FrozenLakeEnv {
    slippery: bool,
    state: usize,
    done: bool,
}

impl FrozenLakeEnv {
    pub fn new(slippery: bool) -> Self {
        FrozenLakeEnv { slippery, state: LAKE_START, done: false }
    }

    pub fn slippery(&self) -> bool {
        self.slippery
    }
}

impl Env for FrozenLakeEnv {
    fn n_states(&self) -> usize {
        LAKE_STATES
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn state(&self) -> usize {
        self.state
    }

    fn done(&self) -> bool {
        self.done
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> usize {
        self.state = LAKE_START;
        self.done = false;
        self.state
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<(usize, f64, bool)> {
        if self.done {
            return Err(GrapeError::Env("step on a finished episode".into()));
        }
        if action > 3 {
            return Err(GrapeError::Env(format!("action {action} not in 0..=3")));
        }
        let dir = if self.slippery {
            // Intended direction or either perpendicular, each 1/3.
            match rng.random_range(0..3u8) {
                0 => (action + 3) % 4,
                1 => action,
                _ => (action + 1) % 4,
            }
        } else {
            action
        };
        let next = slide(self.state, dir);
        let reward = if next == LAKE_GOAL { 1.0 } else { 0.0 };
        self.done = is_absorbing(next);
        self.state = next;
        Ok((next, reward, self.done))
    }

    fn mdp(&self, gamma: f64) -> Result<TabularMdp> {
        let n = LAKE_STATES;
        let na = 4;
        let mut p = vec![0.0; n * na * n];
        let mut r = vec![0.0; n * na];
        let terminal: Vec<bool> = (0..n).map(is_absorbing).collect();
        for x in 0..n {
            for a in 0..na {
                let idx = (x * na + a) * n;
                if terminal[x] {
                    p[idx + x] = 1.0;
                    continue;
                }
                let dirs: &[usize] = if self.slippery {
                    &[(a + 3) % 4, a, (a + 1) % 4]
                } else {
                    &[a]
                };
                let w = 1.0 / dirs.len() as f64;
                for &dir in dirs {
                    let y = slide(x, dir);
                    p[idx + y] += w;
                    if y == LAKE_GOAL {
                        r[x * na + a] += w;
                    }
                }
            }
        }
        TabularMdp::new(n, na, p, r, terminal, gamma, 1.0)
    }
}

/// Exact model of the slippery 8x8 lake at the default discount 0.99.
pub fn frozenlake_mdp() -> Result<TabularMdp> {
    FrozenLakeEnv::new(true).mdp(0.99)
}
