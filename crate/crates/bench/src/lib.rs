//! Fixture builders shared by the timing harnesses.

use grape_core::envs::{Env, NChainEnv, StartState, Transition};
use grape_core::sample::{dirichlet_policy, gaussian_qtable, substream};
use grape_core::{AlgoParams, Policy, QTable};

/// A sampled corridor window plus the tables the target computations need.
pub struct WindowFixture {
    pub psi: QTable,
    pub window: Vec<Transition>,
    pub pi: Policy,
    pub params: AlgoParams,
}

/// Collect `len` uniform-behavior corridor steps from a fixed seed.
pub fn corridor_window(len: usize, seed: u64) -> WindowFixture {
    let mut rng = substream(seed, &[1]);
    let mut env = NChainEnv::new(0.2, StartState::Center).expect("valid slip");
    let n = env.n_states();
    let na = env.n_actions();
    let mu = Policy::uniform(n, na);
    let pi = dirichlet_policy(&mut rng, n, na);
    let psi = gaussian_qtable(&mut rng, n, na, 0.5);
    let mut window = Vec::with_capacity(len);
    env.reset_from(StartState::Center, &mut rng);
    for _ in 0..len {
        if env.done() {
            env.reset_from(StartState::Uniform, &mut rng);
        }
        let x = env.state();
        let a = mu.sample(x, &mut rng);
        let (y, r, d) = env.step(a, &mut rng).expect("corridor step");
        window.push(Transition { x, a, r, y, mu_a: mu.prob(x, a), d });
    }
    let params = AlgoParams::new(0.99, 0.8, 0.9).expect("valid parameters");
    WindowFixture { psi, window, pi, params }
}
