//! Exact linear-algebra solutions: fixed-point action values, state values,
//! advantages, and absorption (success) probabilities.

use crate::error::{GrapeError, Result};
use crate::linalg::{lu_factor, Mat};
use crate::mdp::{Policy, QTable, TabularMdp, VTable};
use crate::operators::p_pi_matrix;

const RESIDUAL_TOL: f64 = 1e-10;

/// Fixed point of the one-step backup, solved as `(I - gamma*P^pi) q = r`.
pub fn exact_q_value(mdp: &TabularMdp, pi: &Policy) -> Result<QTable> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(GrapeError::ShapeMismatch(format!(
            "pi is {}x{}, MDP is {}x{}",
            pi.n_states(),
            pi.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let nsa = n * na;
    let p = p_pi_matrix(mdp, pi);
    let mut m = Mat::identity(nsa);
    for i in 0..nsa {
        for j in 0..nsa {
            let v = p.get(i, j);
            if v != 0.0 {
                m.add_to(i, j, -mdp.gamma() * v);
            }
        }
    }
    let mut r = Vec::with_capacity(nsa);
    for x in 0..n {
        for a in 0..na {
            r.push(mdp.reward(x, a));
        }
    }
    let lu = lu_factor(&m).map_err(|e| GrapeError::SolveFailed(format!("value solve: {e}")))?;
    let q = lu.solve(&r);
    // Verify the residual of the original system before trusting the solve.
    let mut worst = 0.0f64;
    for i in 0..nsa {
        let mut acc = 0.0;
        for j in 0..nsa {
            acc += m.get(i, j) * q[j];
        }
        worst = worst.max((acc - r[i]).abs());
    }
    if worst > RESIDUAL_TOL {
        return Err(GrapeError::SolveFailed(format!(
            "value solve residual {worst:.3e} exceeds {RESIDUAL_TOL:.1e}"
        )));
    }
    QTable::from_vec(n, na, q)
}

/// State values of `pi`, solved directly on the state space.
pub fn exact_v_value(mdp: &TabularMdp, pi: &Policy) -> Result<VTable> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(GrapeError::ShapeMismatch(format!(
            "pi is {}x{}, MDP is {}x{}",
            pi.n_states(),
            pi.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let mut m = Mat::identity(n);
    let mut r = vec![0.0; n];
    for x in 0..n {
        for a in 0..na {
            let pa = pi.prob(x, a);
            if pa == 0.0 {
                continue;
            }
            r[x] += pa * mdp.reward(x, a);
            for (y, &pr) in mdp.transition_row(x, a).iter().enumerate() {
                if pr > 0.0 && !mdp.is_terminal(y) {
                    m.add_to(x, y, -mdp.gamma() * pa * pr);
                }
            }
        }
    }
    let lu = lu_factor(&m).map_err(|e| GrapeError::SolveFailed(format!("state-value solve: {e}")))?;
    Ok(VTable::from_vec(lu.solve(&r)))
}

/// Advantage table `A(x,a) = q(x,a) - sum_b pi(b|x) q(x,b)`.
pub fn advantage_of(q: &QTable, pi: &Policy) -> Result<QTable> {
    if pi.n_states() != q.n_states() || pi.n_actions() != q.n_actions() {
        return Err(GrapeError::ShapeMismatch(format!(
            "pi is {}x{}, table is {}x{}",
            pi.n_states(),
            pi.n_actions(),
            q.n_states(),
            q.n_actions()
        )));
    }
    Ok(QTable::from_fn(q.n_states(), q.n_actions(), |x, a| {
        q.get(x, a) - pi.expected_value(q, x)
    }))
}

/// Probability that the chain induced by `pi` is eventually absorbed in one
/// of the `goal` states when started from `start`. Goal states must be
/// terminal. Fails with a non-absorbing error when some non-terminal states
/// can never reach a terminal state (the linear system is singular).
pub fn policy_success_probability(
    mdp: &TabularMdp,
    pi: &Policy,
    goal: &[usize],
    start: usize,
) -> Result<f64> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(GrapeError::ShapeMismatch(format!(
            "pi is {}x{}, MDP is {}x{}",
            pi.n_states(),
            pi.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let n = mdp.n_states();
    if start >= n {
        return Err(GrapeError::InvalidParam(format!("start state {start} out of range")));
    }
    if goal.is_empty() {
        return Err(GrapeError::InvalidParam("goal state list is empty".into()));
    }
    let mut is_goal = vec![false; n];
    for &g in goal {
        if g >= n {
            return Err(GrapeError::InvalidParam(format!("goal state {g} out of range")));
        }
        if !mdp.is_terminal(g) {
            return Err(GrapeError::InvalidParam(format!("goal state {g} is not terminal")));
        }
        is_goal[g] = true;
    }
    if mdp.is_terminal(start) {
        return Ok(if is_goal[start] { 1.0 } else { 0.0 });
    }

    // Index the non-terminal states and solve
    //   (I - P^pi_NN) h_N = P^pi_NG * 1
    // where N are non-terminal states and G the goal set.
    let mut idx = vec![usize::MAX; n];
    let mut states = Vec::new();
    for x in 0..n {
        if !mdp.is_terminal(x) {
            idx[x] = states.len();
            states.push(x);
        }
    }
    let m_len = states.len();
    let mut m = Mat::identity(m_len);
    let mut b = vec![0.0; m_len];
    for (i, &x) in states.iter().enumerate() {
        for a in 0..mdp.n_actions() {
            let pa = pi.prob(x, a);
            if pa == 0.0 {
                continue;
            }
            for (y, &pr) in mdp.transition_row(x, a).iter().enumerate() {
                if pr == 0.0 {
                    continue;
                }
                if mdp.is_terminal(y) {
                    if is_goal[y] {
                        b[i] += pa * pr;
                    }
                } else {
                    m.add_to(i, idx[y], -pa * pr);
                }
            }
        }
    }
    let lu = lu_factor(&m).map_err(|_| {
        GrapeError::NonAbsorbing(
            "some non-terminal states never reach a terminal state under this policy".into(),
        )
    })?;
    let h = lu.solve(&b);
    let p = h[idx[start]];
    if !(-1e-9..=1.0 + 1e-9).contains(&p) {
        return Err(GrapeError::SolveFailed(format!(
            "absorption probability {p} outside [0, 1]"
        )));
    }
    Ok(p.clamp(0.0, 1.0))
}
