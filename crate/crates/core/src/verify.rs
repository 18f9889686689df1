//! Numerical verification suites for the operator laws, convergence
//! results, and sampled estimators, plus independent truncated-series
//! oracles for the closed-form operators.
//!
//! Every check returns a [`CheckReport`] instead of panicking so the
//! command-line `verify` subcommand and the test harness can share them.

use crate::dp_lab::{
    constant_error_asymptote, error_decay_coefficient, grape_exact_iterate,
    lemma2_identity_check, lr_error_and_bound, partial_geometric_sum, theorem2_bound_sides,
    variance_ratio, variance_ratio_limit, variance_ratio_mc, NoiseLedger,
};
use crate::envs::{Env, NChainEnv, StartState, Transition};
use crate::error::Result;
use crate::mdp::{two_state_mdp, AlgoParams, Policy, QTable, TabularMdp};
use crate::metrics::reuse_bound_sides;
use crate::model_free::{grape_targets, retrace_targets};
use crate::operators::{
    bellman_apply, contraction_modulus, grape_operator_apply, pcmu_apply, retrace_apply,
    LinearOps, TraceChoice,
};
use crate::sample::{dirichlet_policy, gaussian_qtable, random_mdp, substream, RandomMdpOpts};
use crate::solve::{advantage_of, exact_q_value};

/// Outcome of one named verification check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckReport {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        CheckReport { name: name.to_string(), pass, detail }
    }

    /// One-line result suitable for terminal output.
    pub fn line(&self) -> String {
        format!("{} {} - {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Masked `P^pi q` by direct summation (independent of the matrix path).
fn p_pi_apply(mdp: &TabularMdp, pi: &Policy, q: &QTable) -> QTable {
    let n = mdp.n_states();
    let mut w = vec![0.0; n];
    for y in 0..n {
        if !mdp.is_terminal(y) {
            w[y] = pi.expected_value(q, y);
        }
    }
    QTable::from_fn(n, mdp.n_actions(), |x, a| {
        mdp.transition_row(x, a)
            .iter()
            .enumerate()
            .map(|(y, &pr)| if pr > 0.0 { pr * w[y] } else { 0.0 })
            .sum()
    })
}

const SERIES_TAIL: f64 = 1e-13;
const SERIES_MIN_TERMS: usize = 60;

/// Truncated-series evaluation of the multi-step operator
/// `R q = q + sum_j (gl P^{c,mu})^j (T q - q)`, summed until the geometric
/// tail bound drops below 1e-13 (at least 60 terms when the ratio is
/// nonzero). Serves as an independent oracle for the matrix closed form.
pub fn series_retrace_apply(
    mdp: &TabularMdp,
    pi: &Policy,
    mu: &Policy,
    lambda: f64,
    q: &QTable,
) -> Result<QTable> {
    let gl = mdp.gamma() * lambda;
    let t = bellman_apply(mdp, pi, q)?;
    let mut term = t.minus(q);
    let mut acc = q.plus(&term);
    let mut scale = 1.0;
    for j in 1..200_000 {
        scale *= gl;
        if scale == 0.0 {
            break;
        }
        term = pcmu_apply(mdp, pi, mu, TraceChoice::Retrace, &term)?;
        acc = acc.plus(&term.scaled(scale));
        if j >= SERIES_MIN_TERMS && scale * term.sup_norm() / (1.0 - gl) < SERIES_TAIL {
            break;
        }
    }
    Ok(acc)
}

/// Truncated-series evaluation of the gap operator
/// `G q = T q + gl * sum_j (gl P^{c,mu})^j P^pi (T q - q)`.
pub fn series_grape_apply(
    mdp: &TabularMdp,
    pi: &Policy,
    mu: &Policy,
    lambda: f64,
    q: &QTable,
) -> Result<QTable> {
    let gl = mdp.gamma() * lambda;
    let t = bellman_apply(mdp, pi, q)?;
    let mut term = p_pi_apply(mdp, pi, &t.minus(q));
    let mut acc = t.plus(&term.scaled(gl));
    let mut scale = gl;
    for j in 1..200_000 {
        scale *= gl;
        if scale == 0.0 {
            break;
        }
        term = pcmu_apply(mdp, pi, mu, TraceChoice::Retrace, &term)?;
        acc = acc.plus(&term.scaled(scale));
        if j >= SERIES_MIN_TERMS && scale * term.sup_norm() / (1.0 - gl) < SERIES_TAIL {
            break;
        }
    }
    Ok(acc)
}

/// Which operator a contraction check exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// The multi-step backup; contracts with modulus gamma.
    MultiStep,
    /// The gap operator; contracts with modulus `gamma (1 - lambda (1 - gamma))`.
    Gap,
    /// The perturbation propagator; same modulus as the gap operator.
    Perturbation,
}

/// Check both contraction forms over random MDPs (at most six states, four
/// actions), trace cut lambda in {0, 1/2, 1}, and random table pairs:
/// pairwise `||O q1 - O q2|| <= modulus ||q1 - q2|| + tol` and the
/// fixed-point form `||O q - q*|| <= modulus ||q - q*|| + tol`, where the
/// fixed point is the exact action-value table for the multi-step and gap
/// operators and the zero table for the perturbation propagator.
pub fn contraction_check(kind: OperatorKind, n_mdps: usize, tol: f64, seed: u64) -> CheckReport {
    let mut rng = substream(seed, &[10, kind as u64]);
    let opts = RandomMdpOpts::default();
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0usize;
    for _ in 0..n_mdps {
        let mdp = random_mdp(&mut rng, &opts);
        let pi = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let mu = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let qpi = match exact_q_value(&mdp, &pi) {
            Ok(q) => q,
            Err(e) => return CheckReport::new(kind_name(kind), false, format!("setup: {e}")),
        };
        for &lambda in &[0.0, 0.5, 1.0] {
            let ops = match LinearOps::new(&mdp, &pi, &mu, lambda, TraceChoice::Retrace) {
                Ok(o) => o,
                Err(e) => return CheckReport::new(kind_name(kind), false, format!("setup: {e}")),
            };
            let modulus = match kind {
                OperatorKind::MultiStep => mdp.gamma(),
                _ => contraction_modulus(mdp.gamma(), lambda),
            };
            for _ in 0..3 {
                let q1 = gaussian_qtable(&mut rng, mdp.n_states(), mdp.n_actions(), 2.0);
                let q2 = gaussian_qtable(&mut rng, mdp.n_states(), mdp.n_actions(), 2.0);
                let (o1, o2) = match kind {
                    OperatorKind::MultiStep => (ops.retrace(&q1), ops.retrace(&q2)),
                    OperatorKind::Gap => (ops.grape(&q1), ops.grape(&q2)),
                    OperatorKind::Perturbation => (ops.h_apply(&q1), ops.h_apply(&q2)),
                };
                let pair_excess = o1.sup_distance(&o2) - modulus * q1.sup_distance(&q2);
                let fixed_excess = match kind {
                    OperatorKind::MultiStep | OperatorKind::Gap => {
                        o1.sup_distance(&qpi) - modulus * q1.sup_distance(&qpi)
                    }
                    OperatorKind::Perturbation => o1.sup_norm() - modulus * q1.sup_norm(),
                };
                worst = worst.max(pair_excess).max(fixed_excess);
                checked += 1;
            }
        }
    }
    CheckReport::new(
        kind_name(kind),
        worst <= tol,
        format!("{checked} pairs, worst modulus excess {worst:.3e} (tol {tol:.1e})"),
    )
}

fn kind_name(kind: OperatorKind) -> &'static str {
    match kind {
        OperatorKind::MultiStep => "multi-step-contraction",
        OperatorKind::Gap => "gap-operator-contraction",
        OperatorKind::Perturbation => "perturbation-contraction",
    }
}

/// Compare the matrix closed forms against the truncated-series oracles on
/// the two-state fixture and random MDPs.
pub fn closed_vs_series_check(n_mdps: usize, tol: f64, seed: u64) -> CheckReport {
    let mut rng = substream(seed, &[11]);
    let opts = RandomMdpOpts::default();
    let mut worst = 0.0f64;
    let run = |mdp: &TabularMdp, pi: &Policy, mu: &Policy, lambda: f64, q: &QTable| -> Result<f64> {
        let r_closed = retrace_apply(mdp, pi, mu, lambda, q)?;
        let r_series = series_retrace_apply(mdp, pi, mu, lambda, q)?;
        let g_closed = grape_operator_apply(mdp, pi, mu, lambda, q)?;
        let g_series = series_grape_apply(mdp, pi, mu, lambda, q)?;
        Ok(r_closed.sup_distance(&r_series).max(g_closed.sup_distance(&g_series)))
    };

    let two = two_state_mdp();
    let pi2 = Policy::uniform(2, 2);
    let mu2 = Policy::new(2, 2, vec![0.9, 0.1, 0.1, 0.9]).expect("valid policy");
    let q2 = QTable::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]).expect("valid table");
    for &lambda in &[0.0, 0.5, 0.8, 1.0] {
        match run(&two, &pi2, &mu2, lambda, &q2) {
            Ok(d) => worst = worst.max(d),
            Err(e) => return CheckReport::new("closed-form-vs-series", false, format!("{e}")),
        }
    }
    for _ in 0..n_mdps {
        let mdp = random_mdp(&mut rng, &opts);
        let pi = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let mu = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let q = gaussian_qtable(&mut rng, mdp.n_states(), mdp.n_actions(), 1.5);
        for &lambda in &[0.0, 0.5, 1.0] {
            match run(&mdp, &pi, &mu, lambda, &q) {
                Ok(d) => worst = worst.max(d),
                Err(e) => return CheckReport::new("closed-form-vs-series", false, format!("{e}")),
            }
        }
    }
    CheckReport::new(
        "closed-form-vs-series",
        worst <= tol,
        format!("worst closed-vs-series gap {worst:.3e} (tol {tol:.1e})"),
    )
}

/// The decomposition identity reconstructs every noisy iterate to round-off.
pub fn decomposition_residual_check(runs: usize, seed: u64) -> CheckReport {
    let mut rng = substream(seed, &[12]);
    let opts = RandomMdpOpts::default();
    let mut worst = 0.0f64;
    for run in 0..runs {
        let mdp = random_mdp(&mut rng, &opts);
        let pi = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let mu = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let alpha = [0.0, 0.5, 0.9, 1.0][run % 4];
        let lambda = [0.0, 0.5, 1.0][run % 3];
        let params = match AlgoParams::new(mdp.gamma(), lambda, alpha) {
            Ok(p) => p,
            Err(e) => return CheckReport::new("decomposition-identity", false, format!("{e}")),
        };
        let noise = NoiseLedger::gaussian(mdp.n_states(), mdp.n_actions(), 0.4, 40, &mut rng);
        let psi0 = gaussian_qtable(&mut rng, mdp.n_states(), mdp.n_actions(), 1.0);
        match lemma2_identity_check(&mdp, &pi, &mu, &params, 40, &noise, &psi0) {
            Ok(r) => worst = worst.max(r),
            Err(e) => return CheckReport::new("decomposition-identity", false, format!("{e}")),
        }
    }
    CheckReport::new(
        "decomposition-identity",
        worst <= 1e-8,
        format!("{runs} noisy runs, worst residual {worst:.3e} (tol 1e-8)"),
    )
}

/// Normalized gap and table iterates reach their limits at the advertised
/// rates; with no forgetting the error still decays like 1/K.
pub fn normalized_limit_check(n_mdps: usize, seed: u64) -> CheckReport {
    let mut rng = substream(seed, &[13]);
    let opts = RandomMdpOpts::default();
    let mut cases: Vec<TabularMdp> = vec![two_state_mdp()];
    for _ in 0..n_mdps {
        cases.push(random_mdp(&mut rng, &opts));
    }
    let lambda = 0.8;
    let mut worst_rel = 0.0f64;
    for mdp in &cases {
        let pi = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let mu = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let psi0 = QTable::zeros(mdp.n_states(), mdp.n_actions());
        for &alpha in &[0.0, 0.5, 0.9] {
            let params = match AlgoParams::new(mdp.gamma(), lambda, alpha) {
                Ok(p) => p,
                Err(e) => return CheckReport::new("normalized-limits", false, format!("{e}")),
            };
            let rate = alpha.max(params.delta());
            let k = ((1e-8f64).ln() / rate.ln()).ceil().max(5.0) as usize;
            let out = match grape_exact_iterate(mdp, &pi, &mu, &params, k, &NoiseLedger::none(), &psi0)
            {
                Ok(o) => o,
                Err(e) => return CheckReport::new("normalized-limits", false, format!("{e}")),
            };
            let gap_err = out.gap_errors.last().expect("nonempty").1;
            let psi_err = out.psi_errors.last().expect("nonempty").1;
            worst_rel = worst_rel.max(gap_err / mdp.v_max()).max(psi_err / mdp.v_max());
        }
    }
    // No forgetting: convergence slows to 1/K but must not stall.
    let two = two_state_mdp();
    let pi = Policy::uniform(2, 2);
    let params = AlgoParams::new(0.5, lambda, 1.0).expect("valid params");
    let psi0 = QTable::zeros(2, 2);
    let out = grape_exact_iterate(&two, &pi, &pi, &params, 2000, &NoiseLedger::none(), &psi0)
        .expect("iteration runs");
    let mid = out.gap_errors[999].1;
    let end = out.gap_errors[1999].1;
    let slow_ok = end <= mid;
    CheckReport::new(
        "normalized-limits",
        worst_rel <= 1e-6 && slow_ok,
        format!(
            "{} cases, worst relative error {worst_rel:.3e} (tol 1e-6); \
             no-forgetting error {mid:.3e} -> {end:.3e}",
            cases.len() * 3
        ),
    )
}

/// Finite-time error bound dominates the observed error on noisy runs.
pub fn finite_time_bound_check(runs: usize, sigma: f64, seed: u64) -> CheckReport {
    let mut rng = substream(seed, &[14]);
    let opts = RandomMdpOpts::default();
    let mut violations = 0usize;
    let mut tightest = f64::INFINITY;
    for run in 0..runs {
        let mdp = random_mdp(&mut rng, &opts);
        let pi = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let mu = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let alpha = [0.0, 0.5, 0.9, 1.0][run % 4];
        let lambda = [0.0, 0.5, 1.0][run % 3];
        let params = match AlgoParams::new(mdp.gamma(), lambda, alpha) {
            Ok(p) => p,
            Err(e) => return CheckReport::new("finite-time-bound", false, format!("{e}")),
        };
        let noise =
            NoiseLedger::gaussian(mdp.n_states(), mdp.n_actions(), sigma, 40, &mut rng);
        let psi0 = gaussian_qtable(&mut rng, mdp.n_states(), mdp.n_actions(), 1.0);
        match theorem2_bound_sides(&mdp, &pi, &mu, &params, 40, &noise, &psi0) {
            Ok((lhs, rhs)) => {
                if lhs > rhs + 1e-12 {
                    violations += 1;
                }
                tightest = tightest.min(rhs - lhs);
            }
            Err(e) => return CheckReport::new("finite-time-bound", false, format!("{e}")),
        }
    }
    CheckReport::new(
        "finite-time-bound",
        violations == 0,
        format!("{runs} noisy runs, {violations} violations, smallest margin {tightest:.3e}"),
    )
}

/// Learning-rate error envelope: exact on the one-state problem with no
/// trace cut (the multi-step backup degenerates to the one-step backup
/// there), an upper bound on random MDPs.
pub fn learning_rate_envelope_check(seed: u64) -> CheckReport {
    let one = TabularMdp::new(1, 1, vec![1.0], vec![1.0], vec![false], 0.9, 1.0)
        .expect("one-state MDP is valid");
    let pi1 = Policy::uniform(1, 1);
    let mut worst_eq = 0.0f64;
    for &(eta, k) in &[(1.0, 15usize), (0.5, 40), (0.2, 60)] {
        let params = AlgoParams::new(0.9, 0.0, 0.0)
            .and_then(|p| p.with_eta(eta))
            .expect("valid params");
        match lr_error_and_bound(&one, &pi1, &pi1, &params, k) {
            Ok((err, bound)) => worst_eq = worst_eq.max((err - bound).abs()),
            Err(e) => return CheckReport::new("learning-rate-envelope", false, format!("{e}")),
        }
    }
    let mut rng = substream(seed, &[15]);
    let opts = RandomMdpOpts::default();
    let mut worst_excess = f64::NEG_INFINITY;
    for run in 0..20 {
        let mdp = random_mdp(&mut rng, &opts);
        let pi = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let mu = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let eta = [0.3, 1.0][run % 2];
        let params = AlgoParams::new(mdp.gamma(), 0.6, 0.0)
            .and_then(|p| p.with_eta(eta))
            .expect("valid params");
        match lr_error_and_bound(&mdp, &pi, &mu, &params, 30) {
            Ok((err, bound)) => worst_excess = worst_excess.max(err - bound),
            Err(e) => return CheckReport::new("learning-rate-envelope", false, format!("{e}")),
        }
    }
    CheckReport::new(
        "learning-rate-envelope",
        worst_eq <= 1e-12 && worst_excess <= 1e-12,
        format!(
            "one-state equality gap {worst_eq:.3e} (tol 1e-12), \
             random-MDP bound excess {worst_excess:.3e}"
        ),
    )
}

/// Error-injection weights match direct summation and order correctly
/// between heavy and no accumulation.
pub fn error_decay_weight_check() -> CheckReport {
    let (alpha, delta, k_total) = (0.9f64, 0.5f64, 50usize);
    let mut worst = 0.0f64;
    for k in 0..k_total {
        let direct: f64 = (0..(k_total - k))
            .map(|l| alpha.powi((k_total - k - 1 - l) as i32) * delta.powi(l as i32))
            .sum::<f64>()
            / partial_geometric_sum(alpha, k_total);
        worst = worst.max((error_decay_coefficient(alpha, delta, k_total, k) - direct).abs());
    }
    let early_ok = error_decay_coefficient(0.99, 0.5, 50, 0) > error_decay_coefficient(0.0, 0.5, 50, 0);
    let late_ok =
        error_decay_coefficient(0.99, 0.5, 50, 49) < error_decay_coefficient(0.0, 0.5, 50, 49);
    CheckReport::new(
        "error-decay-weights",
        worst <= 1e-12 && early_ok && late_ok,
        format!("worst closed-form gap {worst:.3e} (tol 1e-12); ordering early {early_ok}, late {late_ok}"),
    )
}

/// Persistent constant errors keep the normalized gap within
/// `2 eps / (1 - delta)` of the truth, with and without forgetting.
pub fn constant_error_check() -> CheckReport {
    let mdp = two_state_mdp();
    let pi = Policy::uniform(2, 2);
    let epsilon = 0.1;
    let mut worst_margin = f64::INFINITY;
    let mut pass = true;
    let mut details = Vec::new();
    for &alpha in &[0.0, 1.0] {
        let params = match AlgoParams::new(0.5, 0.8, alpha) {
            Ok(p) => p,
            Err(e) => return CheckReport::new("constant-error-asymptote", false, format!("{e}")),
        };
        let cap = 2.0 * epsilon / (1.0 - params.delta()) + 1e-6;
        match constant_error_asymptote(&mdp, &pi, &pi, &params, epsilon, 5000) {
            Ok(err) => {
                pass &= err <= cap;
                worst_margin = worst_margin.min(cap - err);
                details.push(format!("alpha {alpha}: {err:.4e} <= {cap:.4e}"));
            }
            Err(e) => return CheckReport::new("constant-error-asymptote", false, format!("{e}")),
        }
    }
    CheckReport::new(
        "constant-error-asymptote",
        pass,
        format!("{} (margin {worst_margin:.3e})", details.join("; ")),
    )
}

/// The accumulation-variance limit hits its closed form, and the finite-k
/// closed form approaches it.
pub fn variance_limit_check() -> CheckReport {
    let limit = variance_ratio_limit(0.99);
    let expected = (1.0 - 0.99) / (1.0 + 0.99);
    let lim_ok = (limit - expected).abs() <= 1e-15 && (limit - 5.0251256281e-3).abs() < 1e-9;
    let settle = (variance_ratio(0.99, 2000) - limit).abs();
    CheckReport::new(
        "accumulation-variance-limit",
        lim_ok && settle < 1e-4,
        format!("limit {limit:.10e}, closed form at depth 2000 within {settle:.3e}"),
    )
}

/// Monte-Carlo accumulation variance agrees with the closed form.
pub fn variance_mc_check(k: usize, samples: usize, rel_tol: f64, seed: u64) -> CheckReport {
    let mut rng = substream(seed, &[16]);
    let exact = variance_ratio(0.99, k);
    let mc = variance_ratio_mc(0.99, k, samples, &mut rng);
    let rel = (mc - exact).abs() / exact;
    CheckReport::new(
        "accumulation-variance-mc",
        rel <= rel_tol,
        format!("depth {k}, {samples} draws: mc {mc:.4e} vs exact {exact:.4e} (rel {rel:.3e}, tol {rel_tol})"),
    )
}

/// The policy-reuse evaluation bound dominates its left side on random draws.
pub fn reuse_bound_check(draws: usize, seed: u64) -> CheckReport {
    let mut rng = substream(seed, &[17]);
    let opts = RandomMdpOpts::default();
    let mut violations = 0usize;
    let mut tightest = f64::INFINITY;
    for _ in 0..draws {
        let mdp = random_mdp(&mut rng, &opts);
        let pi = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let pi_old = dirichlet_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let psi0 = gaussian_qtable(&mut rng, mdp.n_states(), mdp.n_actions(), 1.0);
        match reuse_bound_sides(&mdp, &pi, &pi_old, &psi0) {
            Ok((lhs, rhs)) => {
                if lhs > rhs + 1e-12 {
                    violations += 1;
                }
                tightest = tightest.min(rhs - lhs);
            }
            Err(e) => return CheckReport::new("policy-reuse-bound", false, format!("{e}")),
        }
    }
    CheckReport::new(
        "policy-reuse-bound",
        violations == 0,
        format!("{draws} draws, {violations} violations, smallest margin {tightest:.3e}"),
    )
}

/// Monte-Carlo check that the first-step sampled targets are unbiased for
/// the exact operators on the corridor: episodes run under the uniform
/// behavior policy from a forced (center, right) first pair, and the
/// empirical mean of each trajectory's first target must sit within
/// `se_mult` standard errors of the exact backup.
pub fn target_bias_check(
    alpha: f64,
    lambda: f64,
    trajectories: usize,
    se_mult: f64,
    seed: u64,
) -> Result<CheckReport> {
    let name = "target-unbiasedness";
    let slip = 0.2;
    let mut env = NChainEnv::new(slip, StartState::Center)?;
    let params = AlgoParams::new(0.99, lambda, alpha)?;
    let mdp = env.mdp(params.gamma)?;
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let mut rng = substream(seed, &[18, alpha.to_bits(), lambda.to_bits()]);
    let pi = dirichlet_policy(&mut rng, n, na);
    let mu = Policy::uniform(n, na);
    let psi = gaussian_qtable(&mut rng, n, na, 1.0);
    let (x0, a0) = (10usize, 1usize);

    let g_exact = grape_operator_apply(&mdp, &pi, &mu, lambda, &psi)?
        .plus(&advantage_of(&psi, &pi)?.scaled(alpha))
        .get(x0, a0);
    let r_exact = retrace_apply(&mdp, &pi, &mu, lambda, &psi)?.get(x0, a0);

    let cap = 20_000usize;
    let (mut gs, mut gs2, mut rs, mut rs2) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut window: Vec<Transition> = Vec::new();
    for _ in 0..trajectories {
        window.clear();
        env.reset_from(StartState::Fixed(x0), &mut rng);
        let mut action = a0;
        for _ in 0..cap {
            let x = env.state();
            let (y, r, d) = env.step(action, &mut rng)?;
            window.push(Transition { x, a: action, r, y, mu_a: mu.prob(x, action), d });
            if d {
                break;
            }
            action = mu.sample(y, &mut rng);
        }
        let g = grape_targets(&psi, &window, &pi, &params)?[0];
        let r = retrace_targets(&psi, &window, &pi, &params)?[0];
        gs += g;
        gs2 += g * g;
        rs += r;
        rs2 += r * r;
    }
    let nf = trajectories as f64;
    let mut pass = true;
    let mut details = Vec::new();
    for (sum, sum2, exact, label) in
        [(gs, gs2, g_exact, "gap"), (rs, rs2, r_exact, "multi-step")]
    {
        let mean = sum / nf;
        let var = (sum2 - nf * mean * mean) / (nf - 1.0);
        let se = (var / nf).sqrt().max(1e-300);
        let z = (mean - exact).abs() / se;
        pass &= z <= se_mult;
        details.push(format!("{label} z {z:.2}"));
    }
    Ok(CheckReport::new(
        name,
        pass,
        format!(
            "alpha {alpha}, lambda {lambda}, {trajectories} episodes: {} (limit {se_mult} se)",
            details.join(", ")
        ),
    ))
}

/// Operator-law suite: contraction moduli, closed forms against series
/// oracles, and the iterate decomposition identity.
pub fn verify_lemmas(seed: u64) -> Result<Vec<CheckReport>> {
    Ok(vec![
        contraction_check(OperatorKind::Gap, 200, 1e-9, seed),
        contraction_check(OperatorKind::MultiStep, 200, 1e-9, seed),
        contraction_check(OperatorKind::Perturbation, 200, 1e-9, seed),
        closed_vs_series_check(30, 1e-9, seed),
        decomposition_residual_check(50, seed),
    ])
}

/// Convergence and bound suite.
pub fn verify_theorems(seed: u64) -> Result<Vec<CheckReport>> {
    Ok(vec![
        normalized_limit_check(20, seed),
        finite_time_bound_check(100, 0.4, seed),
        learning_rate_envelope_check(seed),
        error_decay_weight_check(),
        constant_error_check(),
        variance_limit_check(),
        reuse_bound_check(100, seed),
    ])
}

/// Sampled-estimator suite (reduced scale, wider statistical margins, so it
/// stays quick for interactive use).
pub fn verify_estimators(seed: u64) -> Result<Vec<CheckReport>> {
    Ok(vec![
        target_bias_check(0.0, 0.8, 20_000, 4.0, seed)?,
        target_bias_check(0.5, 0.0, 20_000, 4.0, seed)?,
        target_bias_check(0.99, 0.8, 20_000, 4.0, seed)?,
        variance_mc_check(500, 30_000, 0.05, seed),
    ])
}
