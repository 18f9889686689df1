//! A 1-D corridor with a rewarding terminal at the right end.
//!
//! States `0..=21`: `0` and `21` are absorbing, `1..=20` are interior.
//! Action 0 moves left, action 1 moves right; with probability `slip` the
//! move is reversed. Entering state 21 pays 1, entering state 0 pays 0.

use rand::{Rng, RngCore};

use crate::envs::Env;
use crate::error::{GrapeError, Result};
use crate::mdp::TabularMdp;

pub const NCHAIN_STATES: usize = 22;
pub const NCHAIN_GOAL: usize = 21;
pub const NCHAIN_CENTER: usize = 10;
const GOAL_REWARD: f64 = 1.0;

/// Where episodes begin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartState {
    /// Always the middle of the corridor (state 10).
    Center,
    /// Uniform over the interior states `1..=20`.
    Uniform,
    /// A fixed interior state.
    Fixed(usize),
}

pub struct NChainEnv {
    slip: f64,
    start: StartState,
    state: usize,
    done: bool,
}

impl NChainEnv {
    pub fn new(slip: f64, start: StartState) -> Result<Self> {
        if !(0.0..=0.5).contains(&slip) {
            return Err(GrapeError::InvalidParam(format!("slip {slip} outside [0, 0.5]")));
        }
        if let StartState::Fixed(x) = start {
            if x == 0 || x >= NCHAIN_GOAL {
                return Err(GrapeError::InvalidParam(format!(
                    "fixed start {x} is not an interior state"
                )));
            }
        }
        Ok(NChainEnv { slip, start, state: NCHAIN_CENTER, done: false })
    }

    /// The default evaluation corridor: 20% slip, episodes start centered.
    pub fn standard() -> Self {
        NChainEnv::new(0.2, StartState::Center).expect("standard parameters are valid")
    }

    pub fn slip(&self) -> f64 {
        self.slip
    }

    /// Restart from an explicit start rule, ignoring the configured one.
    pub fn reset_from(&mut self, start: StartState, rng: &mut dyn RngCore) -> usize {
        self.state = match start {
            StartState::Center => NCHAIN_CENTER,
            StartState::Uniform => rng.random_range(1..NCHAIN_GOAL),
            StartState::Fixed(x) => x,
        };
        self.done = false;
        self.state
    }
}

impl Env for NChainEnv {
    fn n_states(&self) -> usize {
        NCHAIN_STATES
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn state(&self) -> usize {
        self.state
    }

    fn done(&self) -> bool {
        self.done
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> usize {
        self.reset_from(self.start, rng)
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<(usize, f64, bool)> {
        if self.done {
            return Err(GrapeError::Env("step on a finished episode".into()));
        }
        if action > 1 {
            return Err(GrapeError::Env(format!("action {action} not in {{0, 1}}")));
        }
        let forward = action == 1;
        let slipped = rng.random::<f64>() < self.slip;
        let moves_right = forward != slipped;
        let next = if moves_right { self.state + 1 } else { self.state - 1 };
        let reward = if next == NCHAIN_GOAL { GOAL_REWARD } else { 0.0 };
        self.done = next == 0 || next == NCHAIN_GOAL;
        self.state = next;
        Ok((next, reward, self.done))
    }

    fn mdp(&self, gamma: f64) -> Result<TabularMdp> {
        let n = NCHAIN_STATES;
        let na = 2;
        let mut p = vec![0.0; n * na * n];
        let mut r = vec![0.0; n * na];
        let mut terminal = vec![false; n];
        terminal[0] = true;
        terminal[NCHAIN_GOAL] = true;
        for x in 0..n {
            for a in 0..na {
                let idx = (x * na + a) * n;
                if terminal[x] {
                    p[idx + x] = 1.0;
                    continue;
                }
                let p_right = if a == 1 { 1.0 - self.slip } else { self.slip };
                p[idx + x + 1] = p_right;
                p[idx + x - 1] = 1.0 - p_right;
                if x + 1 == NCHAIN_GOAL {
                    // Expected one-step reward: chance of entering the goal.
                    r[x * na + a] = p_right * GOAL_REWARD;
                }
            }
        }
        TabularMdp::new(n, na, p, r, terminal, gamma, GOAL_REWARD)
    }
}

/// Exact model of the corridor at the default discount 0.99.
pub fn nchain_mdp(slip: f64) -> Result<TabularMdp> {
    NChainEnv::new(slip, StartState::Center)?.mdp(0.99)
}
