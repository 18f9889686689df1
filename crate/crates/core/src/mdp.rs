//! Core tabular types: MDP, policies, state/action value tables, and the
//! algorithm hyperparameter bundle.
//!
//! Conventions used throughout the crate:
//! - state-action tables are laid out row-major as `x * n_actions + a`;
//! - terminal states are absorbing self-loops with zero reward, and exact
//!   backup operators treat terminal successors as contributing zero value
//!   (matching the `1 - d` bootstrap cut used by the sampled estimators);
//! - the geometric weight sum `A_k` is `sum_{j<k} alpha^j` with `A_0 = 0`.

use rand::Rng;

use crate::error::{GrapeError, Result};

const PROB_TOL: f64 = 1e-12;

/// Finite MDP with dense transition tensor `P(y|x,a)` and expected rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Transition probabilities, laid out as `x * (nA * nS) + a * nS + y`.
    p: Vec<f64>,
    /// Expected rewards, laid out as `x * nA + a`.
    r: Vec<f64>,
    terminal: Vec<bool>,
    gamma: f64,
    r_max: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        p: Vec<f64>,
        r: Vec<f64>,
        terminal: Vec<bool>,
        gamma: f64,
        r_max: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(GrapeError::InvalidMdp("need at least one state and action".into()));
        }
        if p.len() != n_states * n_actions * n_states {
            return Err(GrapeError::ShapeMismatch(format!(
                "transition tensor has {} entries, expected {}",
                p.len(),
                n_states * n_actions * n_states
            )));
        }
        if r.len() != n_states * n_actions {
            return Err(GrapeError::ShapeMismatch(format!(
                "reward table has {} entries, expected {}",
                r.len(),
                n_states * n_actions
            )));
        }
        if terminal.len() != n_states {
            return Err(GrapeError::ShapeMismatch("terminal flags must cover every state".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(GrapeError::InvalidMdp(format!("gamma {gamma} outside [0, 1)")));
        }
        if !(r_max.is_finite() && r_max >= 0.0) {
            return Err(GrapeError::InvalidMdp(format!("r_max {r_max} must be finite and >= 0")));
        }
        let mdp = TabularMdp { n_states, n_actions, p, r, terminal, gamma, r_max };
        for x in 0..n_states {
            for a in 0..n_actions {
                let row = mdp.transition_row(x, a);
                let mut sum = 0.0;
                for (y, &pr) in row.iter().enumerate() {
                    if !(pr.is_finite() && pr >= 0.0) {
                        return Err(GrapeError::InvalidMdp(format!(
                            "P({y}|{x},{a}) = {pr} is not a probability"
                        )));
                    }
                    sum += pr;
                }
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(GrapeError::InvalidMdp(format!(
                        "transition row ({x},{a}) sums to {sum}, expected 1"
                    )));
                }
                let rw = mdp.reward(x, a);
                if !rw.is_finite() || rw.abs() > r_max + PROB_TOL {
                    return Err(GrapeError::InvalidMdp(format!(
                        "reward r({x},{a}) = {rw} exceeds bound {r_max}"
                    )));
                }
                if mdp.terminal[x] {
                    if (mdp.prob(x, a, x) - 1.0).abs() > PROB_TOL {
                        return Err(GrapeError::InvalidMdp(format!(
                            "terminal state {x} must self-loop under action {a}"
                        )));
                    }
                    if rw != 0.0 {
                        return Err(GrapeError::InvalidMdp(format!(
                            "terminal state {x} must have zero reward, got {rw}"
                        )));
                    }
                }
            }
        }
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Value-scale bound `r_max / (1 - gamma)`.
    pub fn v_max(&self) -> f64 {
        self.r_max / (1.0 - self.gamma)
    }

    #[inline]
    pub fn prob(&self, x: usize, a: usize, y: usize) -> f64 {
        self.p[(x * self.n_actions + a) * self.n_states + y]
    }

    #[inline]
    pub fn transition_row(&self, x: usize, a: usize) -> &[f64] {
        let base = (x * self.n_actions + a) * self.n_states;
        &self.p[base..base + self.n_states]
    }

    #[inline]
    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.r[x * self.n_actions + a]
    }

    #[inline]
    pub fn is_terminal(&self, x: usize) -> bool {
        self.terminal[x]
    }

    /// Sample a successor state for `(x, a)` from the transition row.
    pub fn sample_next<R: Rng + ?Sized>(&self, x: usize, a: usize, rng: &mut R) -> usize {
        let row = self.transition_row(x, a);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (y, &pr) in row.iter().enumerate() {
            acc += pr;
            if u < acc {
                return y;
            }
        }
        self.n_states - 1
    }
}

/// Stochastic policy: rows are probability distributions over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(GrapeError::ShapeMismatch(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        for x in 0..n_states {
            let row = &probs[x * n_actions..(x + 1) * n_actions];
            let mut sum = 0.0;
            for (a, &pr) in row.iter().enumerate() {
                if !(pr.is_finite() && pr >= 0.0) {
                    return Err(GrapeError::InvalidPolicy(format!(
                        "pi({a}|{x}) = {pr} is not a probability"
                    )));
                }
                sum += pr;
            }
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(GrapeError::InvalidPolicy(format!(
                    "policy row {x} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Policy { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Policy { n_states, n_actions, probs: vec![p; n_states * n_actions] }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[x * self.n_actions + a]
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.n_actions..(x + 1) * self.n_actions]
    }

    /// Sample an action at state `x`.
    pub fn sample<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, &pr) in self.row(x).iter().enumerate() {
            acc += pr;
            if u < acc {
                return a;
            }
        }
        self.n_actions - 1
    }

    /// Policy-weighted action average of `q` at one state.
    pub fn expected_value(&self, q: &QTable, x: usize) -> f64 {
        debug_assert_eq!(self.n_actions, q.n_actions());
        let mut acc = 0.0;
        for (a, &pr) in self.row(x).iter().enumerate() {
            if pr > 0.0 {
                acc += pr * q.get(x, a);
            }
        }
        acc
    }

    /// The state-value table `pi Q`.
    pub fn state_values(&self, q: &QTable) -> Result<VTable> {
        if q.n_states() != self.n_states || q.n_actions() != self.n_actions {
            return Err(GrapeError::ShapeMismatch("policy and Q-table shapes differ".into()));
        }
        let data = (0..self.n_states).map(|x| self.expected_value(q, x)).collect();
        Ok(VTable { n_states: self.n_states, data })
    }
}

/// Dense state-action value table.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    data: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable { n_states, n_actions, data: vec![0.0; n_states * n_actions] }
    }

    pub fn constant(n_states: usize, n_actions: usize, v: f64) -> Self {
        QTable { n_states, n_actions, data: vec![v; n_states * n_actions] }
    }

    pub fn from_vec(n_states: usize, n_actions: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_states * n_actions {
            return Err(GrapeError::ShapeMismatch(format!(
                "table has {} entries, expected {}",
                data.len(),
                n_states * n_actions
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(GrapeError::InvalidParam(format!("non-finite table entry {bad}")));
        }
        Ok(QTable { n_states, n_actions, data })
    }

    pub fn from_fn(n_states: usize, n_actions: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n_states * n_actions);
        for x in 0..n_states {
            for a in 0..n_actions {
                data.push(f(x, a));
            }
        }
        QTable { n_states, n_actions, data }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.data[x * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, x: usize, a: usize, v: f64) {
        self.data[x * self.n_actions + a] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &QTable) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sup-norm distance `max |self - other|`.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        assert!(self.same_shape(other), "sup_distance on mismatched shapes");
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scaled(&self, s: f64) -> QTable {
        QTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn plus(&self, other: &QTable) -> QTable {
        assert!(self.same_shape(other), "plus on mismatched shapes");
        QTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            data: self.data.iter().zip(other.data.iter()).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn minus(&self, other: &QTable) -> QTable {
        assert!(self.same_shape(other), "minus on mismatched shapes");
        QTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            data: self.data.iter().zip(other.data.iter()).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Dense state value table.
#[derive(Debug, Clone, PartialEq)]
pub struct VTable {
    n_states: usize,
    data: Vec<f64>,
}

impl VTable {
    pub fn from_vec(data: Vec<f64>) -> Self {
        VTable { n_states: data.len(), data }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn get(&self, x: usize) -> f64 {
        self.data[x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &VTable) -> f64 {
        assert_eq!(self.n_states, other.n_states);
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Hyperparameters shared by the operators and experiment drivers.
///
/// `gamma` is the discount, `lambda` the trace length, `alpha` the
/// gap-increasing averaging weight. `eta` (learning rate), `beta` (softmax
/// policy update temperature) and `sigma` (injected noise level) are only
/// used by the experiments that need them.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoParams {
    pub gamma: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub sigma: Option<f64>,
}

impl AlgoParams {
    pub fn new(gamma: f64, lambda: f64, alpha: f64) -> Result<Self> {
        let p = AlgoParams { gamma, lambda, alpha, eta: None, beta: None, sigma: None };
        p.validate()?;
        Ok(p)
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        self.eta = Some(eta);
        self.validate()?;
        Ok(self)
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        self.beta = Some(beta);
        self.validate()?;
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        self.sigma = Some(sigma);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(GrapeError::InvalidParam(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(GrapeError::InvalidParam(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(GrapeError::InvalidParam(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(GrapeError::InvalidParam(format!("eta {eta} outside (0, 1]")));
            }
        }
        if let Some(beta) = self.beta {
            if !(beta.is_finite() && beta > 0.0) {
                return Err(GrapeError::InvalidParam(format!("beta {beta} must be positive")));
            }
        }
        if let Some(sigma) = self.sigma {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(GrapeError::InvalidParam(format!("sigma {sigma} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Contraction modulus `delta = gamma * (1 - lambda * (1 - gamma))`.
    pub fn delta(&self) -> f64 {
        crate::operators::contraction_modulus(self.gamma, self.lambda)
    }
}

/// Two-state diagnostic MDP with closed-form values.
///
/// States {0, 1}, actions {stay, swap} (deterministic), reward 1 in state 0
/// and 0 in state 1, discount 1/2. Under the uniform policy,
/// `Q = [[1.75, 1.25], [0.25, 0.75]]` and `V = (1.5, 0.5)`.
pub fn two_state_mdp() -> TabularMdp {
    let n_states = 2;
    let n_actions = 2;
    let mut p = vec![0.0; n_states * n_actions * n_states];
    let mut set = |x: usize, a: usize, y: usize| {
        p[(x * n_actions + a) * n_states + y] = 1.0;
    };
    set(0, 0, 0); // stay
    set(0, 1, 1); // swap
    set(1, 0, 1);
    set(1, 1, 0);
    let r = vec![1.0, 1.0, 0.0, 0.0];
    TabularMdp::new(n_states, n_actions, p, r, vec![false, false], 0.5, 1.0)
        .expect("two-state fixture is valid")
}
