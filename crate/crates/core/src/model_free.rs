//! Sample-based estimation: trajectory targets for the multi-step
//! operators, tabular updates, softmax policy improvement, and the two
//! model-free experiment drivers.
//!
//! Targets are built over a window of transitions by one backward sweep.
//! With `delta_t = r_t + gamma (1-d_t) (pi table)(y_t) - table(x_t, a_t)`,
//! `rho_t = pi(a_t|x_t) / mu_t`, and `c_t = min(1, rho_t)`:
//!
//! ```text
//! gap target:      G_t = delta_t + alpha * gap_t + table(x_t,a_t)
//!                        + gl (1-d_t) b_{t+1},
//!                  b_t = rho_t delta_t + gl (1-d_t) c_t b_{t+1}
//! multi-step:      R_t = delta_t + table(x_t,a_t) + gl (1-d_t) b_{t+1},
//!                  b_t = c_t delta_t + gl (1-d_t) c_t b_{t+1}
//! ```
//!
//! with `gl = gamma * lambda` and `b` zero past the window. The terminal
//! flag cuts bootstrapping and trace continuation but keeps the local
//! residual, so averaged targets are unbiased for the exact operators with
//! terminal-masked backups.

use rand_chacha::ChaCha8Rng;

use crate::dp_lab::{partial_geometric_sum, IterationSeries};
use crate::envs::{Env, FrozenLakeEnv, NChainEnv, ReplayBuffer, StartState, Transition};
use crate::envs::{LAKE_GOAL, LAKE_START};
use crate::error::{GrapeError, Result};
use crate::mdp::{AlgoParams, Policy, QTable};
use crate::solve::{advantage_of, exact_q_value, policy_success_probability};

/// Which estimator drives a model-free run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfAlgo {
    /// Gap accumulation, updated by replacing visited entries with the
    /// window average of their targets.
    Grape,
    /// Multi-step backup blended in with a learning rate.
    RetraceLr,
}

enum Leading {
    Rho,
    TraceC,
}

fn check_window(table: &QTable, window: &[Transition], pi: &Policy) -> Result<()> {
    if pi.n_states() != table.n_states() || pi.n_actions() != table.n_actions() {
        return Err(GrapeError::ShapeMismatch(format!(
            "pi is {}x{}, table is {}x{}",
            pi.n_states(),
            pi.n_actions(),
            table.n_states(),
            table.n_actions()
        )));
    }
    for (i, tr) in window.iter().enumerate() {
        if tr.x >= table.n_states() || tr.y >= table.n_states() || tr.a >= table.n_actions() {
            return Err(GrapeError::Buffer(format!(
                "transition {i} indexes ({}, {}, {}) outside a {}x{} table",
                tr.x,
                tr.a,
                tr.y,
                table.n_states(),
                table.n_actions()
            )));
        }
        if !tr.r.is_finite() || !tr.mu_a.is_finite() || tr.mu_a < 0.0 || tr.mu_a > 1.0 {
            return Err(GrapeError::Buffer(format!(
                "transition {i} has reward {} and behavior probability {}",
                tr.r, tr.mu_a
            )));
        }
    }
    Ok(())
}

fn window_targets(
    table: &QTable,
    window: &[Transition],
    pi: &Policy,
    params: &AlgoParams,
    leading: Leading,
    add_gap: bool,
) -> Result<Vec<f64>> {
    params.validate()?;
    check_window(table, window, pi)?;
    let n = window.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let gamma = params.gamma;
    let gl = gamma * params.lambda;
    let alpha = params.alpha;
    // Policy-averaged table values per state, read at every bootstrap.
    let averaged: Vec<f64> =
        (0..table.n_states()).map(|x| pi.expected_value(table, x)).collect();

    let mut rho = vec![0.0; n];
    let mut trace = vec![0.0; n];
    let mut delta = vec![0.0; n];
    for (i, tr) in window.iter().enumerate() {
        let p = pi.prob(tr.x, tr.a);
        rho[i] = if p == 0.0 {
            0.0
        } else if tr.mu_a == 0.0 {
            return Err(GrapeError::UndefinedRatio { x: tr.x, a: tr.a });
        } else {
            p / tr.mu_a
        };
        trace[i] = rho[i].min(1.0);
        let cont = if tr.d { 0.0 } else { 1.0 };
        delta[i] = tr.r + gamma * cont * averaged[tr.y] - table.get(tr.x, tr.a);
    }

    // Backward accumulation; b[i] covers residuals from index i onward.
    let mut b = vec![0.0; n + 1];
    for i in (0..n).rev() {
        let cont = if window[i].d { 0.0 } else { 1.0 };
        let lead = match leading {
            Leading::Rho => rho[i],
            Leading::TraceC => trace[i],
        };
        b[i] = lead * delta[i] + gl * cont * trace[i] * b[i + 1];
    }

    let mut out = Vec::with_capacity(n);
    for (i, tr) in window.iter().enumerate() {
        let cont = if tr.d { 0.0 } else { 1.0 };
        let mut target = table.get(tr.x, tr.a) + delta[i] + gl * cont * b[i + 1];
        if add_gap {
            target += alpha * (table.get(tr.x, tr.a) - averaged[tr.x]);
        }
        out.push(target);
    }
    Ok(out)
}

/// Per-transition targets whose conditional mean is the gap-accumulating
/// backup `G psi + alpha * gap(psi)` at each visited state-action pair.
pub fn grape_targets(
    psi: &QTable,
    window: &[Transition],
    pi: &Policy,
    params: &AlgoParams,
) -> Result<Vec<f64>> {
    window_targets(psi, window, pi, params, Leading::Rho, true)
}

/// Per-transition targets whose conditional mean is the multi-step backup
/// `R q` at each visited state-action pair.
pub fn retrace_targets(
    q: &QTable,
    window: &[Transition],
    pi: &Policy,
    params: &AlgoParams,
) -> Result<Vec<f64>> {
    window_targets(q, window, pi, params, Leading::TraceC, false)
}

/// Replace (or blend, when `eta` is given) each visited entry with the mean
/// of its targets over the window; entries never visited stay unchanged.
pub fn table_update_from_targets(
    q: &QTable,
    window: &[Transition],
    targets: &[f64],
    eta: Option<f64>,
) -> Result<QTable> {
    if window.len() != targets.len() {
        return Err(GrapeError::ShapeMismatch(format!(
            "{} transitions but {} targets",
            window.len(),
            targets.len()
        )));
    }
    if let Some(e) = eta {
        if !(e > 0.0 && e <= 1.0) {
            return Err(GrapeError::InvalidParam(format!("eta {e} outside (0, 1]")));
        }
    }
    let n = q.n_states();
    let na = q.n_actions();
    let mut sums = vec![0.0; n * na];
    let mut counts = vec![0u32; n * na];
    for (tr, &t) in window.iter().zip(targets) {
        if tr.x >= n || tr.a >= na {
            return Err(GrapeError::Buffer(format!(
                "transition indexes ({}, {}) outside a {n}x{na} table",
                tr.x, tr.a
            )));
        }
        if !t.is_finite() {
            return Err(GrapeError::InvalidParam("non-finite target".into()));
        }
        sums[tr.x * na + tr.a] += t;
        counts[tr.x * na + tr.a] += 1;
    }
    Ok(QTable::from_fn(n, na, |x, a| {
        let i = x * na + a;
        if counts[i] == 0 {
            q.get(x, a)
        } else {
            let mean = sums[i] / f64::from(counts[i]);
            match eta {
                Some(e) => q.get(x, a) + e * (mean - q.get(x, a)),
                None => mean,
            }
        }
    }))
}

/// Multiplicative-weights policy improvement: `pi'(a|x)` proportional to
/// `pi(a|x) * exp(beta * adv(x,a))`, computed stably by shifting each row by
/// its largest exponent over the support of `pi`. Actions with zero
/// probability stay at zero.
pub fn trpo_softmax_update(pi: &Policy, adv: &QTable, beta: f64) -> Result<Policy> {
    if pi.n_states() != adv.n_states() || pi.n_actions() != adv.n_actions() {
        return Err(GrapeError::ShapeMismatch(format!(
            "pi is {}x{}, advantage is {}x{}",
            pi.n_states(),
            pi.n_actions(),
            adv.n_states(),
            adv.n_actions()
        )));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(GrapeError::InvalidParam(format!("beta must be positive, got {beta}")));
    }
    let n = pi.n_states();
    let na = pi.n_actions();
    let mut probs = vec![0.0; n * na];
    for x in 0..n {
        let mut shift = f64::NEG_INFINITY;
        for a in 0..na {
            if pi.prob(x, a) > 0.0 {
                shift = shift.max(beta * adv.get(x, a));
            }
        }
        let mut sum = 0.0;
        for a in 0..na {
            let p = pi.prob(x, a);
            if p > 0.0 {
                let w = p * (beta * adv.get(x, a) - shift).exp();
                probs[x * na + a] = w;
                sum += w;
            }
        }
        if !(sum.is_finite() && sum > 0.0) {
            return Err(GrapeError::InvalidPolicy(format!(
                "softmax row {x} degenerated (sum {sum})"
            )));
        }
        for a in 0..na {
            probs[x * na + a] /= sum;
        }
        // Absorb rounding drift into the largest entry so the row sums to 1.
        let drift: f64 = 1.0 - probs[x * na..x * na + na].iter().sum::<f64>();
        let argmax = (0..na)
            .max_by(|&i, &j| {
                probs[x * na + i].partial_cmp(&probs[x * na + j]).expect("finite probabilities")
            })
            .expect("at least one action");
        probs[x * na + argmax] += drift;
    }
    Policy::new(n, na, probs)
}

fn sum_squared_gap(truth: &QTable, estimate: &QTable) -> f64 {
    truth
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Off-policy evaluation on the corridor. Runs `blocks` blocks of
/// `block_size` behavior steps; each block restarts from the center and
/// episodes ending inside a block restart from a uniform interior state.
/// After every block the table is updated from that block's transitions and
/// the squared advantage-estimation error is recorded, normalized by its
/// value at the zero table.
#[allow(clippy::too_many_arguments)]
pub fn nchain_eval_run(
    env: &mut NChainEnv,
    pi: &Policy,
    mu: &Policy,
    params: &AlgoParams,
    algo: MfAlgo,
    blocks: usize,
    block_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<IterationSeries> {
    params.validate()?;
    if blocks == 0 || block_size == 0 {
        return Err(GrapeError::InvalidParam("blocks and block size must be positive".into()));
    }
    let eta = match algo {
        MfAlgo::RetraceLr => Some(params.eta.ok_or_else(|| {
            GrapeError::InvalidParam("eta is required for the blended backup".into())
        })?),
        MfAlgo::Grape => None,
    };
    let n = env.n_states();
    let na = env.n_actions();
    if pi.n_states() != n || pi.n_actions() != na || mu.n_states() != n || mu.n_actions() != na {
        return Err(GrapeError::ShapeMismatch("policies must match the environment".into()));
    }
    let mdp = env.mdp(params.gamma)?;
    let a_true = advantage_of(&exact_q_value(&mdp, pi)?, pi)?;
    let zeros = QTable::zeros(n, na);
    let err0 = sum_squared_gap(&a_true, &zeros);
    if err0 <= 0.0 {
        return Err(GrapeError::InvalidParam(
            "true advantage is identically zero; error ratios are undefined".into(),
        ));
    }

    let mut table = zeros;
    let mut series = IterationSeries::new("error_ratio", 0, params.clone());
    series.push(0, 1.0);
    let mut window: Vec<Transition> = Vec::with_capacity(block_size);
    for block in 1..=blocks {
        env.reset_from(StartState::Center, rng);
        window.clear();
        for _ in 0..block_size {
            if env.done() {
                env.reset_from(StartState::Uniform, rng);
            }
            let x = env.state();
            let a = mu.sample(x, rng);
            let (y, r, d) = env.step(a, rng)?;
            window.push(Transition { x, a, r, y, mu_a: mu.prob(x, a), d });
        }
        let targets = match algo {
            MfAlgo::Grape => grape_targets(&table, &window, pi, params)?,
            MfAlgo::RetraceLr => retrace_targets(&table, &window, pi, params)?,
        };
        table = table_update_from_targets(&table, &window, &targets, eta)?;
        let estimate = match algo {
            MfAlgo::Grape => advantage_of(&table, pi)?.scaled(1.0 - params.alpha),
            MfAlgo::RetraceLr => advantage_of(&table, pi)?,
        };
        series.push(block, sum_squared_gap(&a_true, &estimate) / err0);
    }
    Ok(series)
}

/// Output of a control run: the exact success probability of each policy
/// iterate, plus the final table and policy.
pub struct ControlRunOut {
    pub series: IterationSeries,
    /// Value-update ticks skipped because the buffer was still shorter than
    /// the window length.
    pub skipped_updates: usize,
    pub policy: Policy,
    pub table: QTable,
}

/// Policy iteration on the slippery lake. Behavior follows the current
/// policy; transitions go to a replay buffer tagged with their behavior
/// probabilities. Every `n_update` steps the value table is refreshed from
/// one random contiguous window of `n_update` transitions; every
/// `policy_period` steps the policy takes a multiplicative-weights step on
/// the current advantage estimate and its exact start-state success
/// probability is recorded.
#[allow(clippy::too_many_arguments)]
pub fn frozenlake_control_run(
    env: &mut FrozenLakeEnv,
    params: &AlgoParams,
    algo: MfAlgo,
    total_steps: usize,
    n_update: usize,
    policy_period: usize,
    buffer_capacity: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ControlRunOut> {
    params.validate()?;
    if total_steps == 0 || n_update == 0 || policy_period == 0 {
        return Err(GrapeError::InvalidParam(
            "step counts and update periods must be positive".into(),
        ));
    }
    if buffer_capacity < n_update {
        return Err(GrapeError::InvalidParam(format!(
            "buffer capacity {buffer_capacity} is smaller than the update window {n_update}"
        )));
    }
    let beta = params
        .beta
        .ok_or_else(|| GrapeError::InvalidParam("beta is required for policy updates".into()))?;
    let eta = match algo {
        MfAlgo::RetraceLr => Some(params.eta.ok_or_else(|| {
            GrapeError::InvalidParam("eta is required for the blended backup".into())
        })?),
        MfAlgo::Grape => None,
    };
    let mdp = env.mdp(params.gamma)?;
    let n = env.n_states();
    let na = env.n_actions();
    let mut policy = Policy::uniform(n, na);
    let mut table = QTable::zeros(n, na);
    let mut buffer = ReplayBuffer::new(buffer_capacity)?;
    let mut skipped = 0usize;
    // Per-pair count of value updates, used to normalize the accumulated
    // gap when the policy improves. Rarely visited pairs have accumulated
    // far less geometric weight than frequently visited ones, so a single
    // global scale would shrink exactly the entries that matter most.
    let mut pair_updates = vec![0usize; n * na];

    let mut series = IterationSeries::new("success_probability", 0, params.clone());
    series.push(0, policy_success_probability(&mdp, &policy, &[LAKE_GOAL], LAKE_START)?);

    env.reset(rng);
    for t in 0..total_steps {
        if env.done() {
            env.reset(rng);
        }
        let x = env.state();
        let a = policy.sample(x, rng);
        let (y, r, d) = env.step(a, rng)?;
        buffer.push(Transition { x, a, r, y, mu_a: policy.prob(x, a), d });

        if (t + 1) % n_update == 0 {
            if buffer.len() >= n_update {
                let window = buffer.contiguous(n_update, rng)?;
                let targets = match algo {
                    MfAlgo::Grape => grape_targets(&table, &window, &policy, params)?,
                    MfAlgo::RetraceLr => retrace_targets(&table, &window, &policy, params)?,
                };
                table = table_update_from_targets(&table, &window, &targets, eta)?;
                let mut seen = vec![false; n * na];
                for tr in &window {
                    seen[tr.x * na + tr.a] = true;
                }
                for (count, hit) in pair_updates.iter_mut().zip(&seen) {
                    *count += usize::from(*hit);
                }
            } else {
                skipped += 1;
            }
        }
        if (t + 1) % policy_period == 0 {
            let adv = match algo {
                MfAlgo::Grape => {
                    let mut adv = advantage_of(&table, &policy)?;
                    for (v, &count) in adv.data_mut().iter_mut().zip(&pair_updates) {
                        *v /= partial_geometric_sum(params.alpha, count.max(1));
                    }
                    adv
                }
                MfAlgo::RetraceLr => advantage_of(&table, &policy)?,
            };
            policy = trpo_softmax_update(&policy, &adv, beta)?;
            series.push(t + 1, policy_success_probability(&mdp, &policy, &[LAKE_GOAL], LAKE_START)?);
        }
    }
    Ok(ControlRunOut { series, skipped_updates: skipped, policy, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{two_state_mdp, TabularMdp};
    use crate::operators::{grape_operator_apply, retrace_apply};
    use crate::sample::substream;

    fn eval_params(alpha: f64) -> AlgoParams {
        AlgoParams::new(0.5, 0.8, alpha).unwrap()
    }

    #[test]
    fn terminal_transition_target_is_reward_plus_gap() {
        // Tiny episodic chain: state 0 steps into terminal state 1.
        let psi = QTable::from_vec(2, 2, vec![2.0, 4.0, 0.0, 0.0]).unwrap();
        let pi = Policy::uniform(2, 2);
        let params = AlgoParams::new(0.9, 0.8, 0.5).unwrap();
        let window = [Transition { x: 0, a: 1, r: 0.7, y: 1, mu_a: 0.5, d: true }];
        let g = grape_targets(&psi, &window, &pi, &params).unwrap();
        // No bootstrap, no continuation: r + alpha * (psi(0,1) - avg psi(0)).
        assert!((g[0] - (0.7 + 0.5 * (4.0 - 3.0))).abs() < 1e-15);
        let r = retrace_targets(&psi, &window, &pi, &params).unwrap();
        assert!((r[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn zero_lambda_targets_are_one_step_backups() {
        let psi = QTable::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let pi = Policy::new(2, 2, vec![0.3, 0.7, 0.6, 0.4]).unwrap();
        let params = AlgoParams::new(0.9, 0.0, 0.0).unwrap();
        let window = [
            Transition { x: 0, a: 0, r: 1.0, y: 1, mu_a: 0.5, d: false },
            Transition { x: 1, a: 1, r: -1.0, y: 0, mu_a: 0.5, d: false },
        ];
        let t = retrace_targets(&psi, &window, &pi, &params).unwrap();
        let avg1 = 0.6 * 3.0 + 0.4 * 4.0;
        let avg0 = 0.3 * 1.0 + 0.7 * 2.0;
        assert!((t[0] - (1.0 + 0.9 * avg1)).abs() < 1e-15);
        assert!((t[1] - (-1.0 + 0.9 * avg0)).abs() < 1e-15);
    }

    #[test]
    fn episodes_in_one_window_stay_isolated() {
        let psi = QTable::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let pi = Policy::new(2, 2, vec![0.2, 0.8, 0.7, 0.3]).unwrap();
        let params = AlgoParams::new(0.9, 0.9, 0.6).unwrap();
        let first = vec![
            Transition { x: 0, a: 0, r: 0.3, y: 1, mu_a: 0.4, d: false },
            Transition { x: 1, a: 1, r: -0.2, y: 0, mu_a: 0.6, d: true },
        ];
        let mut joined = first.clone();
        joined.push(Transition { x: 1, a: 0, r: 0.9, y: 0, mu_a: 0.5, d: false });
        joined.push(Transition { x: 0, a: 1, r: 0.1, y: 1, mu_a: 0.5, d: true });
        for (alone, together) in [
            (grape_targets(&psi, &first, &pi, &params).unwrap(),
             grape_targets(&psi, &joined, &pi, &params).unwrap()),
            (retrace_targets(&psi, &first, &pi, &params).unwrap(),
             retrace_targets(&psi, &joined, &pi, &params).unwrap()),
        ] {
            assert!((alone[0] - together[0]).abs() < 1e-15);
            assert!((alone[1] - together[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn undefined_ratio_is_caught_only_when_needed() {
        let psi = QTable::zeros(2, 2);
        let pi = Policy::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let params = eval_params(0.5);
        let bad = [Transition { x: 0, a: 0, r: 0.0, y: 1, mu_a: 0.0, d: false }];
        assert!(matches!(
            grape_targets(&psi, &bad, &pi, &params),
            Err(GrapeError::UndefinedRatio { x: 0, a: 0 })
        ));
        // pi never takes this action, so the ratio is never formed.
        let unused = [Transition { x: 0, a: 1, r: 0.0, y: 1, mu_a: 0.0, d: false }];
        assert!(grape_targets(&psi, &unused, &pi, &params).is_ok());
        let out_of_range = [Transition { x: 5, a: 0, r: 0.0, y: 1, mu_a: 0.5, d: false }];
        assert!(grape_targets(&psi, &out_of_range, &pi, &params).is_err());
    }

    /// Sample a behavior trajectory on the two-state MDP (which never
    /// terminates) from a forced first pair, truncated after `len` steps.
    fn sample_window(
        mdp: &TabularMdp,
        mu: &Policy,
        x0: usize,
        a0: usize,
        len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Transition> {
        let mut window = Vec::with_capacity(len);
        let mut x = x0;
        let mut a = a0;
        for _ in 0..len {
            let y = mdp.sample_next(x, a, rng);
            window.push(Transition { x, a, r: mdp.reward(x, a), y, mu_a: mu.prob(x, a), d: false });
            x = y;
            a = mu.sample(x, rng);
        }
        window
    }

    #[test]
    fn first_step_targets_are_unbiased_for_the_exact_operators() {
        let mdp = two_state_mdp();
        let pi = Policy::new(2, 2, vec![0.3, 0.7, 0.6, 0.4]).unwrap();
        let mu = Policy::new(2, 2, vec![0.6, 0.4, 0.3, 0.7]).unwrap();
        let psi = QTable::from_vec(2, 2, vec![0.8, -0.4, 1.2, 0.3]).unwrap();
        let (x0, a0) = (0usize, 1usize);
        for &alpha in &[0.0, 0.7] {
            let params = eval_params(alpha);
            let g_exact = grape_operator_apply(&mdp, &pi, &mu, 0.8, &psi)
                .unwrap()
                .plus(&advantage_of(&psi, &pi).unwrap().scaled(alpha));
            let r_exact = retrace_apply(&mdp, &pi, &mu, 0.8, &psi).unwrap();
            let mut rng = substream(601, &[alpha.to_bits(), 0]);
            let trials = 20_000;
            let (mut gs, mut gs2, mut rs, mut rs2) = (0.0, 0.0, 0.0, 0.0);
            for _ in 0..trials {
                // gamma*lambda = 0.4, so 50 steps truncate far below 1e-15.
                let window = sample_window(&mdp, &mu, x0, a0, 50, &mut rng);
                let g = grape_targets(&psi, &window, &pi, &params).unwrap()[0];
                let r = retrace_targets(&psi, &window, &pi, &params).unwrap()[0];
                gs += g;
                gs2 += g * g;
                rs += r;
                rs2 += r * r;
            }
            let n = trials as f64;
            for (sum, sum2, exact, name) in [
                (gs, gs2, g_exact.get(x0, a0), "gap"),
                (rs, rs2, r_exact.get(x0, a0), "multi-step"),
            ] {
                let mean = sum / n;
                let var = (sum2 - n * mean * mean) / (n - 1.0);
                let se = (var / n).sqrt();
                assert!(
                    (mean - exact).abs() < 4.0 * se + 1e-12,
                    "alpha {alpha} {name}: mean {mean} vs exact {exact} (se {se})"
                );
            }
        }
    }

    #[test]
    fn table_update_averages_and_blends() {
        let q = QTable::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let window = [
            Transition { x: 0, a: 0, r: 0.0, y: 1, mu_a: 0.5, d: false },
            Transition { x: 0, a: 0, r: 0.0, y: 1, mu_a: 0.5, d: false },
            Transition { x: 1, a: 1, r: 0.0, y: 0, mu_a: 0.5, d: false },
        ];
        let targets = [2.0, 4.0, 7.0];
        let replaced = table_update_from_targets(&q, &window, &targets, None).unwrap();
        assert_eq!(replaced.get(0, 0), 3.0);
        assert_eq!(replaced.get(1, 1), 7.0);
        assert_eq!(replaced.get(0, 1), 1.0); // untouched
        assert_eq!(replaced.get(1, 0), 1.0);
        let blended = table_update_from_targets(&q, &window, &targets, Some(0.5)).unwrap();
        assert_eq!(blended.get(0, 0), 2.0);
        assert_eq!(blended.get(1, 1), 4.0);
        assert_eq!(blended.get(0, 1), 1.0);
        assert!(table_update_from_targets(&q, &window, &targets[..2], None).is_err());
        assert!(table_update_from_targets(&q, &window, &targets, Some(0.0)).is_err());
        assert!(table_update_from_targets(&q, &window, &[f64::NAN, 0.0, 0.0], None).is_err());
    }

    #[test]
    fn softmax_update_frozen_two_action_value() {
        let pi = Policy::uniform(1, 2);
        let adv = QTable::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let next = trpo_softmax_update(&pi, &adv, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((next.prob(0, 0) - e / (e + 1.0)).abs() < 1e-12);
        assert!((next.prob(0, 1) - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn softmax_update_is_stable_and_support_preserving() {
        // Zero-probability actions stay at zero even with large exponents,
        // and the shift is taken over the support so rows never collapse.
        let pi = Policy::new(1, 3, vec![0.0, 0.5, 0.5]).unwrap();
        let adv = QTable::from_vec(1, 3, vec![50.0, -10.0, -9.0]).unwrap();
        let next = trpo_softmax_update(&pi, &adv, 100.0).unwrap();
        assert_eq!(next.prob(0, 0), 0.0);
        let sum: f64 = (0..3).map(|a| next.prob(0, a)).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(next.prob(0, 2) > next.prob(0, 1));
        assert!(trpo_softmax_update(&pi, &adv, 0.0).is_err());
        assert!(trpo_softmax_update(&pi, &adv, f64::INFINITY).is_err());
    }

    #[test]
    fn corridor_evaluation_error_falls() {
        let mut env = NChainEnv::new(0.2, StartState::Center).unwrap();
        let pi = Policy::new(22, 2, vec![0.35, 0.65].repeat(22)).unwrap();
        let mu = Policy::uniform(22, 2);
        let params = AlgoParams::new(0.99, 0.0, 0.9).unwrap();
        let mut rng = substream(602, &[0]);
        let series =
            nchain_eval_run(&mut env, &pi, &mu, &params, MfAlgo::Grape, 150, 250, &mut rng)
                .unwrap();
        let pts = series.points();
        assert_eq!(pts[0], (0, 1.0));
        assert_eq!(pts.len(), 151);
        let final_ratio = pts.last().unwrap().1;
        assert!(final_ratio < 0.5, "error ratio should fall well below 1, got {final_ratio}");
    }

    #[test]
    fn corridor_evaluation_is_deterministic_per_seed() {
        let pi = Policy::new(22, 2, vec![0.35, 0.65].repeat(22)).unwrap();
        let mu = Policy::uniform(22, 2);
        let params = AlgoParams::new(0.99, 0.0, 0.5).unwrap().with_eta(0.5).unwrap();
        let run = |seed: u64| {
            let mut env = NChainEnv::new(0.2, StartState::Center).unwrap();
            let mut rng = substream(seed, &[7]);
            nchain_eval_run(&mut env, &pi, &mu, &params, MfAlgo::RetraceLr, 20, 100, &mut rng)
                .unwrap()
                .points()
                .to_vec()
        };
        assert_eq!(run(603), run(603));
        assert_ne!(run(603), run(604));
    }

    #[test]
    fn lake_control_records_policy_iterates() {
        let mut env = FrozenLakeEnv::new(true);
        let params =
            AlgoParams::new(0.99, 0.0, 0.99).unwrap().with_beta(10.0).unwrap();
        let mut rng = substream(605, &[0]);
        let out = frozenlake_control_run(
            &mut env,
            &params,
            MfAlgo::Grape,
            3000,
            50,
            1000,
            2000,
            &mut rng,
        )
        .unwrap();
        let pts = out.series.points();
        assert_eq!(pts.len(), 4); // steps 0, 1000, 2000, 3000
        assert_eq!(pts[0].0, 0);
        assert_eq!(pts[3].0, 3000);
        for &(_, p) in pts {
            assert!((0.0..=1.0).contains(&p));
        }
        assert_eq!(out.skipped_updates, 0);
    }

    #[test]
    fn lake_control_is_deterministic_per_seed() {
        let params = AlgoParams::new(0.99, 0.0, 0.0)
            .unwrap()
            .with_beta(5.0)
            .unwrap()
            .with_eta(0.5)
            .unwrap();
        let run = |seed: u64| {
            let mut env = FrozenLakeEnv::new(true);
            let mut rng = substream(seed, &[1]);
            frozenlake_control_run(
                &mut env,
                &params,
                MfAlgo::RetraceLr,
                2000,
                50,
                500,
                1000,
                &mut rng,
            )
            .unwrap()
            .series
            .points()
            .to_vec()
        };
        assert_eq!(run(606), run(606));
    }

    #[test]
    fn control_inputs_are_validated() {
        let params_no_beta = AlgoParams::new(0.99, 0.0, 0.99).unwrap();
        let mut env = FrozenLakeEnv::new(true);
        let mut rng = substream(607, &[0]);
        assert!(frozenlake_control_run(
            &mut env, &params_no_beta, MfAlgo::Grape, 100, 10, 50, 100, &mut rng
        )
        .is_err());
        let params = params_no_beta.with_beta(1.0).unwrap();
        // Buffer smaller than the update window.
        assert!(frozenlake_control_run(
            &mut env, &params, MfAlgo::Grape, 100, 50, 50, 10, &mut rng
        )
        .is_err());
        // Blended algorithm without a learning rate.
        assert!(frozenlake_control_run(
            &mut env, &params, MfAlgo::RetraceLr, 100, 10, 50, 100, &mut rng
        )
        .is_err());
    }
}
