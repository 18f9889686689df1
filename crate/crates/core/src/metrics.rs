//! Error metrics and the policy-reuse evaluation bound.

use crate::error::{GrapeError, Result};
use crate::mdp::{Policy, QTable, TabularMdp};
use crate::solve::exact_v_value;

/// Mean over all entries of the squared difference.
pub fn mean_squared_error(a: &QTable, b: &QTable) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(GrapeError::ShapeMismatch(format!(
            "tables are {}x{} and {}x{}",
            a.n_states(),
            a.n_actions(),
            b.n_states(),
            b.n_actions()
        )));
    }
    let n = a.data().len() as f64;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / n)
}

/// Root-mean-squared error of `estimate` against `truth`, normalized by the
/// baseline error `e0` (typically the error of the initial estimate).
pub fn nrmse(truth: &QTable, estimate: &QTable, e0: f64) -> Result<f64> {
    if !(e0.is_finite() && e0 > 0.0) {
        return Err(GrapeError::InvalidParam(format!(
            "normalization e0 must be finite and positive, got {e0}"
        )));
    }
    Ok(mean_squared_error(truth, estimate)?.sqrt() / e0)
}

/// Largest per-state KL divergence `max_x KL(pi(.|x) || pi_old(.|x))`.
/// Terms with `pi = 0` contribute zero; `pi > 0` where `pi_old = 0` is an
/// error because the divergence is infinite there.
pub fn kl_max(pi: &Policy, pi_old: &Policy) -> Result<f64> {
    if pi.n_states() != pi_old.n_states() || pi.n_actions() != pi_old.n_actions() {
        return Err(GrapeError::ShapeMismatch(format!(
            "policies are {}x{} and {}x{}",
            pi.n_states(),
            pi.n_actions(),
            pi_old.n_states(),
            pi_old.n_actions()
        )));
    }
    let mut worst = 0.0f64;
    for x in 0..pi.n_states() {
        let mut kl = 0.0;
        for a in 0..pi.n_actions() {
            let p = pi.prob(x, a);
            if p == 0.0 {
                continue;
            }
            let q = pi_old.prob(x, a);
            if q == 0.0 {
                return Err(GrapeError::InfiniteKl { x, a });
            }
            kl += p * (p / q).ln();
        }
        worst = worst.max(kl);
    }
    Ok(worst)
}

/// Both sides of the bound on the error incurred by evaluating a new policy
/// `pi` against a value table `psi0` fitted under an old policy `pi_old`:
///
/// ```text
/// lhs = ||V^pi - pi psi0||_inf
/// rhs = sqrt(2 D) * V_max / (1 - gamma)
///     + sqrt(2 D) * ||psi0||_inf
///     + ||V^pi_old - pi_old psi0||_inf
/// ```
///
/// where `D` is the largest per-state KL between `pi` and `pi_old`. The
/// right side dominates the left by a total-variation argument plus the
/// triangle inequality, so `lhs <= rhs` whenever `D` is finite.
pub fn reuse_bound_sides(
    mdp: &TabularMdp,
    pi: &Policy,
    pi_old: &Policy,
    psi0: &QTable,
) -> Result<(f64, f64)> {
    if psi0.n_states() != mdp.n_states() || psi0.n_actions() != mdp.n_actions() {
        return Err(GrapeError::ShapeMismatch(format!(
            "psi0 is {}x{}, MDP is {}x{}",
            psi0.n_states(),
            psi0.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let d = kl_max(pi, pi_old)?;
    let v_new = exact_v_value(mdp, pi)?;
    let v_old = exact_v_value(mdp, pi_old)?;
    let pi_psi = pi.state_values(psi0)?;
    let pi_old_psi = pi_old.state_values(psi0)?;
    let lhs = v_new.sup_distance(&pi_psi);
    let spread = (2.0 * d).sqrt();
    let rhs = spread * mdp.v_max() / (1.0 - mdp.gamma())
        + spread * psi0.sup_norm()
        + v_old.sup_distance(&pi_old_psi);
    Ok((lhs, rhs))
}
