//! Exact policy-evaluation operators on state-action tables.
//!
//! All backups mask terminal successor states (they contribute zero value),
//! mirroring the `1 - d` bootstrap cut in the sampled estimators. The
//! multi-step operators use the closed forms
//!
//! ```text
//! R q = q + (I - gl*P^{c,mu})^-1 (T^pi q - q)                  (Retrace)
//! G q = T^pi q + gl*(I - gl*P^{c,mu})^-1 P^pi (T^pi q - q)     (GRAPE)
//! H q = g*P^pi q + gl*(I - gl*P^{c,mu})^-1 P^pi (g*P^pi - I) q
//! ```
//!
//! with `g = gamma`, `gl = gamma * lambda`. `H` is the linear part that
//! propagates additive perturbations through `G`: `G(q + e) = G q + H e`.
//! The resolvent is LU-factored once per (pi, mu, lambda) and reused.

use crate::error::{GrapeError, Result};
use crate::linalg::{lu_factor, Lu, Mat};
use crate::mdp::{Policy, QTable, TabularMdp};

/// Per-step trace coefficient `c0` in the `P^{c,mu}` operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceChoice {
    /// Truncated importance sampling, `c0 = min(1, pi/mu)`.
    Retrace,
    /// Full importance sampling, `c0 = pi/mu`.
    ImportanceSampling,
    /// Tree-backup, `c0 = pi(a|x)`.
    TreeBackup,
}

/// Contraction modulus `delta = gamma * (1 - lambda * (1 - gamma))`.
pub fn contraction_modulus(gamma: f64, lambda: f64) -> f64 {
    assert!((0.0..1.0).contains(&gamma), "gamma {gamma} outside [0, 1)");
    assert!((0.0..=1.0).contains(&lambda), "lambda {lambda} outside [0, 1]");
    gamma * (1.0 - lambda * (1.0 - gamma))
}

fn check_policy(mdp: &TabularMdp, pi: &Policy, name: &str) -> Result<()> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(GrapeError::ShapeMismatch(format!(
            "{name} is {}x{}, MDP is {}x{}",
            pi.n_states(),
            pi.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

fn check_table(mdp: &TabularMdp, q: &QTable) -> Result<()> {
    if q.n_states() != mdp.n_states() || q.n_actions() != mdp.n_actions() {
        return Err(GrapeError::ShapeMismatch(format!(
            "table is {}x{}, MDP is {}x{}",
            q.n_states(),
            q.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(GrapeError::InvalidParam(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// One-step expected backup `(T^pi q)(x,a) = r + gamma * E_y[pi q](y)`.
pub fn bellman_apply(mdp: &TabularMdp, pi: &Policy, q: &QTable) -> Result<QTable> {
    check_policy(mdp, pi, "pi")?;
    check_table(mdp, q)?;
    let n = mdp.n_states();
    // Policy-averaged successor values, zero at terminal states.
    let mut w = vec![0.0; n];
    for y in 0..n {
        if !mdp.is_terminal(y) {
            w[y] = pi.expected_value(q, y);
        }
    }
    Ok(QTable::from_fn(n, mdp.n_actions(), |x, a| {
        let mut acc = 0.0;
        for (y, &pr) in mdp.transition_row(x, a).iter().enumerate() {
            if pr > 0.0 {
                acc += pr * w[y];
            }
        }
        mdp.reward(x, a) + mdp.gamma() * acc
    }))
}

/// Combined behavior-and-trace weights `mu(b|y) * c0(y,b)` as a flat
/// (state, action) table. The importance ratio is only formed where the
/// weight is nonzero, so `mu` may put zero mass on actions `pi` never takes.
fn trace_weights(pi: &Policy, mu: &Policy, trace: TraceChoice) -> Result<Vec<f64>> {
    let n = pi.n_states();
    let na = pi.n_actions();
    let mut w = vec![0.0; n * na];
    for y in 0..n {
        for b in 0..na {
            let pv = pi.prob(y, b);
            let mv = mu.prob(y, b);
            w[y * na + b] = match trace {
                TraceChoice::Retrace => {
                    if mv == 0.0 && pv > 0.0 {
                        return Err(GrapeError::UndefinedRatio { x: y, a: b });
                    }
                    // mu * min(1, pi/mu) collapses to min(mu, pi).
                    mv.min(pv)
                }
                TraceChoice::ImportanceSampling => {
                    if mv == 0.0 && pv > 0.0 {
                        return Err(GrapeError::UndefinedRatio { x: y, a: b });
                    }
                    // mu * (pi/mu) collapses to pi.
                    pv
                }
                TraceChoice::TreeBackup => mv * pv,
            };
        }
    }
    Ok(w)
}

/// Trace-weighted transition operator
/// `(P^{c,mu} q)(x,a) = E_y sum_b mu(b|y) c0(y,b) q(y,b)`.
pub fn pcmu_apply(
    mdp: &TabularMdp,
    pi: &Policy,
    mu: &Policy,
    trace: TraceChoice,
    q: &QTable,
) -> Result<QTable> {
    check_policy(mdp, pi, "pi")?;
    check_policy(mdp, mu, "mu")?;
    check_table(mdp, q)?;
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let w = trace_weights(pi, mu, trace)?;
    let mut z = vec![0.0; n];
    for y in 0..n {
        if !mdp.is_terminal(y) {
            let mut acc = 0.0;
            for b in 0..na {
                acc += w[y * na + b] * q.get(y, b);
            }
            z[y] = acc;
        }
    }
    Ok(QTable::from_fn(n, na, |x, a| {
        let mut acc = 0.0;
        for (y, &pr) in mdp.transition_row(x, a).iter().enumerate() {
            if pr > 0.0 {
                acc += pr * z[y];
            }
        }
        acc
    }))
}

/// Masked `P^pi` as a dense (nS*nA) x (nS*nA) matrix.
pub(crate) fn p_pi_matrix(mdp: &TabularMdp, pi: &Policy) -> Mat {
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let mut m = Mat::zeros(n * na);
    for x in 0..n {
        for a in 0..na {
            let i = x * na + a;
            for (y, &pr) in mdp.transition_row(x, a).iter().enumerate() {
                if pr > 0.0 && !mdp.is_terminal(y) {
                    for b in 0..na {
                        let pb = pi.prob(y, b);
                        if pb > 0.0 {
                            m.add_to(i, y * na + b, pr * pb);
                        }
                    }
                }
            }
        }
    }
    m
}

fn p_weighted_matrix(mdp: &TabularMdp, weights: &[f64]) -> Mat {
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let mut m = Mat::zeros(n * na);
    for x in 0..n {
        for a in 0..na {
            let i = x * na + a;
            for (y, &pr) in mdp.transition_row(x, a).iter().enumerate() {
                if pr > 0.0 && !mdp.is_terminal(y) {
                    for b in 0..na {
                        let wv = weights[y * na + b];
                        if wv > 0.0 {
                            m.add_to(i, y * na + b, pr * wv);
                        }
                    }
                }
            }
        }
    }
    m
}

/// Prefactored linear forms of the Bellman, Retrace, GRAPE, and H operators
/// for a fixed (mdp, pi, mu, lambda) tuple.
pub struct LinearOps {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    lambda: f64,
    rewards: Vec<f64>,
    p_pi: Mat,
    resolvent: Lu,
}

impl LinearOps {
    pub fn new(
        mdp: &TabularMdp,
        pi: &Policy,
        mu: &Policy,
        lambda: f64,
        trace: TraceChoice,
    ) -> Result<Self> {
        check_policy(mdp, pi, "pi")?;
        check_policy(mdp, mu, "mu")?;
        check_lambda(lambda)?;
        let n = mdp.n_states();
        let na = mdp.n_actions();
        let nsa = n * na;
        let gamma = mdp.gamma();
        let gl = gamma * lambda;
        let weights = trace_weights(pi, mu, trace)?;
        let p_cmu = p_weighted_matrix(mdp, &weights);
        let mut res = Mat::identity(nsa);
        for i in 0..nsa {
            for j in 0..nsa {
                let v = p_cmu.get(i, j);
                if v != 0.0 {
                    res.add_to(i, j, -gl * v);
                }
            }
        }
        let resolvent = lu_factor(&res)?;
        let mut rewards = Vec::with_capacity(nsa);
        for x in 0..n {
            for a in 0..na {
                rewards.push(mdp.reward(x, a));
            }
        }
        Ok(LinearOps {
            n_states: n,
            n_actions: na,
            gamma,
            lambda,
            rewards,
            p_pi: p_pi_matrix(mdp, pi),
            resolvent,
        })
    }

    fn table(&self, data: Vec<f64>) -> QTable {
        QTable::from_vec(self.n_states, self.n_actions, data)
            .expect("operator output has the input shape and finite entries")
    }

    fn check(&self, q: &QTable) {
        assert!(
            q.n_states() == self.n_states && q.n_actions() == self.n_actions,
            "table shape does not match the operator set"
        );
    }

    /// `T^pi q`.
    pub fn bellman(&self, q: &QTable) -> QTable {
        self.check(q);
        let mut t = self.p_pi.matvec(q.data());
        for (i, v) in t.iter_mut().enumerate() {
            *v = self.rewards[i] + self.gamma * *v;
        }
        self.table(t)
    }

    /// Retrace `R q`.
    pub fn retrace(&self, q: &QTable) -> QTable {
        self.check(q);
        let t = self.bellman(q);
        let d: Vec<f64> = t.data().iter().zip(q.data()).map(|(a, b)| a - b).collect();
        let s = self.resolvent.solve(&d);
        let out: Vec<f64> = q.data().iter().zip(s.iter()).map(|(a, b)| a + b).collect();
        self.table(out)
    }

    /// GRAPE `G q`.
    pub fn grape(&self, q: &QTable) -> QTable {
        self.check(q);
        let gl = self.gamma * self.lambda;
        let t = self.bellman(q);
        let d: Vec<f64> = t.data().iter().zip(q.data()).map(|(a, b)| a - b).collect();
        let v = self.p_pi.matvec(&d);
        let s = self.resolvent.solve(&v);
        let out: Vec<f64> = t.data().iter().zip(s.iter()).map(|(a, b)| a + gl * b).collect();
        self.table(out)
    }

    /// Perturbation propagator `H q`.
    pub fn h_apply(&self, q: &QTable) -> QTable {
        self.check(q);
        let gl = self.gamma * self.lambda;
        let u = self.p_pi.matvec(q.data());
        let gu = self.p_pi.matvec(&u);
        let w: Vec<f64> = gu.iter().zip(u.iter()).map(|(a, b)| self.gamma * a - b).collect();
        let s = self.resolvent.solve(&w);
        let out: Vec<f64> = u
            .iter()
            .zip(s.iter())
            .map(|(a, b)| self.gamma * a + gl * b)
            .collect();
        self.table(out)
    }
}

/// Retrace operator, closed form via the matrix resolvent.
pub fn retrace_apply(
    mdp: &TabularMdp,
    pi: &Policy,
    mu: &Policy,
    lambda: f64,
    q: &QTable,
) -> Result<QTable> {
    check_table(mdp, q)?;
    let ops = LinearOps::new(mdp, pi, mu, lambda, TraceChoice::Retrace)?;
    Ok(ops.retrace(q))
}

/// GRAPE operator, closed form via the matrix resolvent.
pub fn grape_operator_apply(
    mdp: &TabularMdp,
    pi: &Policy,
    mu: &Policy,
    lambda: f64,
    q: &QTable,
) -> Result<QTable> {
    check_table(mdp, q)?;
    let ops = LinearOps::new(mdp, pi, mu, lambda, TraceChoice::Retrace)?;
    Ok(ops.grape(q))
}

/// The linear operator propagating additive perturbations through GRAPE.
pub fn h_operator_apply(
    mdp: &TabularMdp,
    pi: &Policy,
    mu: &Policy,
    lambda: f64,
    q: &QTable,
) -> Result<QTable> {
    check_table(mdp, q)?;
    let ops = LinearOps::new(mdp, pi, mu, lambda, TraceChoice::Retrace)?;
    Ok(ops.h_apply(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::two_state_mdp;
    use crate::sample::{dirichlet_policy, gaussian_qtable, random_mdp, substream, RandomMdpOpts};

    #[test]
    fn modulus_frozen_values() {
        assert!((contraction_modulus(0.99, 0.8) - 0.98208).abs() < 1e-12);
        assert_eq!(contraction_modulus(0.99, 0.0), 0.99);
        // lambda = 1 collapses to gamma^2.
        assert!((contraction_modulus(0.9, 1.0) - 0.81).abs() < 1e-15);
    }

    #[test]
    fn bellman_two_state_by_hand() {
        let mdp = two_state_mdp();
        let pi = Policy::uniform(2, 2);
        let q = QTable::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = bellman_apply(&mdp, &pi, &q).unwrap();
        // (pi q)(0) = 1.5, (pi q)(1) = 3.5.
        assert_eq!(t.get(0, 0), 1.0 + 0.5 * 1.5);
        assert_eq!(t.get(0, 1), 1.0 + 0.5 * 3.5);
        assert_eq!(t.get(1, 0), 0.5 * 3.5);
        assert_eq!(t.get(1, 1), 0.5 * 1.5);
    }

    #[test]
    fn bellman_fixed_point_is_exact_q() {
        let mdp = two_state_mdp();
        let pi = Policy::uniform(2, 2);
        let q = QTable::from_vec(2, 2, vec![1.75, 1.25, 0.25, 0.75]).unwrap();
        let t = bellman_apply(&mdp, &pi, &q).unwrap();
        assert!(t.sup_distance(&q) < 1e-15);
    }

    /// Brute-force triple sum for `P^{c,mu}`, used as an independent oracle.
    fn pcmu_brute(
        mdp: &TabularMdp,
        pi: &Policy,
        mu: &Policy,
        trace: TraceChoice,
        q: &QTable,
    ) -> QTable {
        QTable::from_fn(mdp.n_states(), mdp.n_actions(), |x, a| {
            let mut acc = 0.0;
            for y in 0..mdp.n_states() {
                if mdp.is_terminal(y) {
                    continue;
                }
                for b in 0..mdp.n_actions() {
                    let c0 = match trace {
                        TraceChoice::Retrace => {
                            if mu.prob(y, b) == 0.0 {
                                0.0
                            } else {
                                (pi.prob(y, b) / mu.prob(y, b)).min(1.0)
                            }
                        }
                        TraceChoice::ImportanceSampling => {
                            if mu.prob(y, b) == 0.0 {
                                0.0
                            } else {
                                pi.prob(y, b) / mu.prob(y, b)
                            }
                        }
                        TraceChoice::TreeBackup => pi.prob(y, b),
                    };
                    acc += mdp.prob(x, a, y) * mu.prob(y, b) * c0 * q.get(y, b);
                }
            }
            acc
        })
    }

    #[test]
    fn pcmu_matches_brute_force() {
        let mut rng = substream(101, &[0]);
        let opts = RandomMdpOpts::default();
        for _ in 0..25 {
            let mdp = random_mdp(&mut rng, &opts);
            let pi = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
            let mu = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
            let q = gaussian_qtable(&mut rng, mdp.n_states(), mdp.n_actions(), 1.0);
            for trace in [TraceChoice::Retrace, TraceChoice::ImportanceSampling, TraceChoice::TreeBackup] {
                let fast = pcmu_apply(&mdp, &pi, &mu, trace, &q).unwrap();
                let brute = pcmu_brute(&mdp, &pi, &mu, trace, &q);
                assert!(fast.sup_distance(&brute) < 1e-12);
            }
        }
    }

    #[test]
    fn pcmu_two_state_by_hand() {
        let mdp = two_state_mdp();
        let pi = Policy::uniform(2, 2);
        let mu = Policy::new(2, 2, vec![0.9, 0.1, 0.9, 0.1]).unwrap();
        let q = QTable::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // Retrace weights min(mu, pi): state 0 -> (0.5, 0.1), state 1 -> (0.5, 0.1).
        // z(0) = 0.5*1 + 0.1*2 = 0.7; z(1) = 0.5*3 + 0.1*4 = 1.9.
        let out = pcmu_apply(&mdp, &pi, &mu, TraceChoice::Retrace, &q).unwrap();
        assert!((out.get(0, 0) - 0.7).abs() < 1e-15); // stay in 0
        assert!((out.get(0, 1) - 1.9).abs() < 1e-15); // swap to 1
        assert!((out.get(1, 0) - 1.9).abs() < 1e-15);
        assert!((out.get(1, 1) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn retrace_ratio_undefined_is_an_error() {
        let mdp = two_state_mdp();
        let pi = Policy::uniform(2, 2);
        // mu never plays action 1, pi does.
        let mu = Policy::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let q = QTable::zeros(2, 2);
        let err = pcmu_apply(&mdp, &pi, &mu, TraceChoice::Retrace, &q);
        assert!(matches!(err, Err(GrapeError::UndefinedRatio { .. })));
        // Tree-backup does not form the ratio, so it is fine.
        assert!(pcmu_apply(&mdp, &pi, &mu, TraceChoice::TreeBackup, &q).is_ok());
    }

    #[test]
    fn zero_mu_allowed_where_pi_is_zero() {
        let mdp = two_state_mdp();
        let pi = Policy::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let mu = Policy::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let q = QTable::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(pcmu_apply(&mdp, &pi, &mu, TraceChoice::Retrace, &q).is_ok());
    }

    #[test]
    fn lambda_zero_reductions() {
        // With lambda = 0 both Retrace and GRAPE reduce to one Bellman backup.
        let mut rng = substream(102, &[0]);
        let opts = RandomMdpOpts::default();
        for _ in 0..10 {
            let mdp = random_mdp(&mut rng, &opts);
            let pi = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
            let mu = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
            let q = gaussian_qtable(&mut rng, mdp.n_states(), mdp.n_actions(), 1.0);
            let t = bellman_apply(&mdp, &pi, &q).unwrap();
            let r = retrace_apply(&mdp, &pi, &mu, 0.0, &q).unwrap();
            let g = grape_operator_apply(&mdp, &pi, &mu, 0.0, &q).unwrap();
            assert!(r.sup_distance(&t) < 1e-12);
            assert!(g.sup_distance(&t) < 1e-12);
        }
    }

    #[test]
    fn grape_is_affine_with_h_as_linear_part() {
        let mut rng = substream(103, &[0]);
        let opts = RandomMdpOpts::default();
        for _ in 0..10 {
            let mdp = random_mdp(&mut rng, &opts);
            let pi = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
            let mu = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
            let q1 = gaussian_qtable(&mut rng, mdp.n_states(), mdp.n_actions(), 1.0);
            let q2 = gaussian_qtable(&mut rng, mdp.n_states(), mdp.n_actions(), 1.0);
            let lambda = 0.7;
            let lhs = grape_operator_apply(&mdp, &pi, &mu, lambda, &q1.plus(&q2)).unwrap();
            let rhs = grape_operator_apply(&mdp, &pi, &mu, lambda, &q1)
                .unwrap()
                .plus(&h_operator_apply(&mdp, &pi, &mu, lambda, &q2).unwrap());
            assert!(lhs.sup_distance(&rhs) < 1e-10);
        }
    }

    #[test]
    fn terminal_rows_return_reward_only() {
        // One interior state feeding a terminal: backups at the terminal row
        // are exactly its (zero) reward, and interior rows see no value from
        // the terminal successor.
        let p = vec![
            0.0, 1.0, // interior -> terminal
            1.0, 0.0, // interior -> interior (second action loops back)
            0.0, 1.0, // terminal self-loop
            0.0, 1.0,
        ];
        let mdp = TabularMdp::new(2, 2, p, vec![1.0, 0.5, 0.0, 0.0], vec![false, true], 0.9, 1.0).unwrap();
        let pi = Policy::uniform(2, 2);
        let q = QTable::constant(2, 2, 7.0);
        let t = bellman_apply(&mdp, &pi, &q).unwrap();
        assert_eq!(t.get(0, 0), 1.0); // no bootstrap through the terminal
        assert_eq!(t.get(0, 1), 0.5 + 0.9 * 7.0);
        assert_eq!(t.get(1, 0), 0.0);
        assert_eq!(t.get(1, 1), 0.0);
    }

    #[test]
    fn one_shot_wrappers_match_prefactored_ops() {
        let mdp = two_state_mdp();
        let mut rng = substream(104, &[0]);
        let pi = dirichlet_policy(&mut rng, 2, 2);
        let mu = dirichlet_policy(&mut rng, 2, 2);
        let q = gaussian_qtable(&mut rng, 2, 2, 1.0);
        let ops = LinearOps::new(&mdp, &pi, &mu, 0.8, TraceChoice::Retrace).unwrap();
        assert_eq!(
            retrace_apply(&mdp, &pi, &mu, 0.8, &q).unwrap().data(),
            ops.retrace(&q).data()
        );
        assert_eq!(
            grape_operator_apply(&mdp, &pi, &mu, 0.8, &q).unwrap().data(),
            ops.grape(&q).data()
        );
        assert_eq!(
            h_operator_apply(&mdp, &pi, &mu, 0.8, &q).unwrap().data(),
            ops.h_apply(&q).data()
        );
    }
}
