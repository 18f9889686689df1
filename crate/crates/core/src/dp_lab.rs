//! Exact dynamic-programming experiments: gap-accumulating iteration,
//! its decomposition identity and error bounds, noisy-backup experiments,
//! and the learning-rate baseline.
//!
//! The gap-accumulating recursion iterated throughout this module is
//!
//! ```text
//! psi_{k+1} = G psi_k + alpha * gap(psi_k) + eps_k
//! ```
//!
//! where `gap(psi) = psi - pi psi` is the advantage-shaped part of `psi`,
//! `G` the multi-step operator from [`crate::operators`], and `eps_k` an
//! optional per-iteration error table. With `A_K = sum_{k<K} alpha^k`, the
//! normalized gap `gap(psi_K) / A_K` converges to the true advantage and
//! `psi_K / A_K` to `advantage + (1 - alpha) * value`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{GrapeError, Result};
use crate::mdp::{AlgoParams, Policy, QTable, TabularMdp};
use crate::metrics::nrmse;
use crate::operators::{LinearOps, TraceChoice};
use crate::sample::{dirichlet_policy, gaussian_qtable};
use crate::solve::{advantage_of, exact_q_value, exact_v_value};

/// A per-trial sequence of (iteration, value) measurements.
#[derive(Debug, Clone)]
pub struct IterationSeries {
    pub metric: String,
    pub trial: usize,
    pub params: AlgoParams,
    points: Vec<(usize, f64)>,
}

impl IterationSeries {
    pub fn new(metric: impl Into<String>, trial: usize, params: AlgoParams) -> Self {
        IterationSeries { metric: metric.into(), trial, params, points: Vec::new() }
    }

    /// Append a point; iteration indices must be strictly increasing.
    pub fn push(&mut self, step: usize, value: f64) {
        if let Some(&(last, _)) = self.points.last() {
            assert!(step > last, "series steps must increase: {last} then {step}");
        }
        self.points.push((step, value));
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    pub fn last_value(&self) -> Option<f64> {
        self.points.last().map(|&(_, v)| v)
    }
}

/// Per-iteration error tables fed into the exact recursions.
pub struct NoiseLedger {
    eps: Vec<QTable>,
}

impl NoiseLedger {
    /// No recorded errors: every iteration is exact.
    pub fn none() -> Self {
        NoiseLedger { eps: Vec::new() }
    }

    /// Independent N(0, sigma^2) entries for `len` iterations.
    pub fn gaussian(
        n_states: usize,
        n_actions: usize,
        sigma: f64,
        len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let eps = (0..len).map(|_| gaussian_qtable(rng, n_states, n_actions, sigma)).collect();
        NoiseLedger { eps }
    }

    /// The same constant table (every entry `value`) at each iteration.
    pub fn constant(n_states: usize, n_actions: usize, value: f64, len: usize) -> Self {
        let eps = (0..len).map(|_| QTable::constant(n_states, n_actions, value)).collect();
        NoiseLedger { eps }
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    /// The error injected at iteration `k`, if any was recorded.
    pub fn eps(&self, k: usize) -> Option<&QTable> {
        self.eps.get(k)
    }

    /// Running accumulations `E_k = eps_k + alpha * E_{k-1}` for every
    /// recorded iteration.
    pub fn accumulated(&self, alpha: f64) -> Vec<QTable> {
        let mut out: Vec<QTable> = Vec::with_capacity(self.eps.len());
        for (k, e) in self.eps.iter().enumerate() {
            let acc = if k == 0 {
                e.clone()
            } else {
                out[k - 1].scaled(alpha).plus(e)
            };
            out.push(acc);
        }
        out
    }
}

/// `A_k = sum_{j=0}^{k-1} alpha^j`, with `A_0 = 0`.
pub fn partial_geometric_sum(alpha: f64, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if (alpha - 1.0).abs() < 1e-12 {
        return k as f64;
    }
    (1.0 - alpha.powi(k as i32)) / (1.0 - alpha)
}

/// `sum_{j=0}^{k-1} alpha^j delta^{k-1-j} = (alpha^k - delta^k)/(alpha - delta)`,
/// continued as `k * alpha^(k-1)` when the bases coincide.
pub fn cross_geometric_sum(alpha: f64, delta: f64, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if (alpha - delta).abs() < 1e-12 {
        return k as f64 * alpha.powi(k as i32 - 1);
    }
    (alpha.powi(k as i32) - delta.powi(k as i32)) / (alpha - delta)
}

fn check_iteration_inputs(
    mdp: &TabularMdp,
    params: &AlgoParams,
    psi0: &QTable,
    k_steps: usize,
) -> Result<()> {
    params.validate()?;
    if (params.gamma - mdp.gamma()).abs() > 1e-12 {
        return Err(GrapeError::InvalidParam(format!(
            "params gamma {} does not match MDP gamma {}",
            params.gamma,
            mdp.gamma()
        )));
    }
    if psi0.n_states() != mdp.n_states() || psi0.n_actions() != mdp.n_actions() {
        return Err(GrapeError::ShapeMismatch(format!(
            "psi0 is {}x{}, MDP is {}x{}",
            psi0.n_states(),
            psi0.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    if k_steps == 0 {
        return Err(GrapeError::InvalidParam("iteration count must be positive".into()));
    }
    Ok(())
}

/// Output of [`grape_exact_iterate`].
pub struct GrapeIterateOut {
    /// `||advantage - gap(psi_k)/A_k||_inf` for `k = 1..=K`.
    pub gap_errors: Vec<(usize, f64)>,
    /// `||advantage + (1-alpha) value - psi_k/A_k||_inf` for `k = 1..=K`.
    pub psi_errors: Vec<(usize, f64)>,
    pub psi: QTable,
    pub gap: QTable,
}

/// Run the gap-accumulating recursion for `k_steps` iterations, injecting
/// per-iteration errors from `noise` (missing entries mean exact steps).
pub fn grape_exact_iterate(
    mdp: &TabularMdp,
    pi: &Policy,
    mu: &Policy,
    params: &AlgoParams,
    k_steps: usize,
    noise: &NoiseLedger,
    psi0: &QTable,
) -> Result<GrapeIterateOut> {
    check_iteration_inputs(mdp, params, psi0, k_steps)?;
    let alpha = params.alpha;
    let ops = LinearOps::new(mdp, pi, mu, params.lambda, TraceChoice::Retrace)?;
    let q_true = exact_q_value(mdp, pi)?;
    let a_true = advantage_of(&q_true, pi)?;
    let v_true = exact_v_value(mdp, pi)?;
    // Limit of psi_k / A_k: advantage plus (1 - alpha) times the state value.
    let psi_limit = QTable::from_fn(mdp.n_states(), mdp.n_actions(), |x, a| {
        a_true.get(x, a) + (1.0 - alpha) * v_true.get(x)
    });

    let mut psi = psi0.clone();
    let mut gap_errors = Vec::with_capacity(k_steps);
    let mut psi_errors = Vec::with_capacity(k_steps);
    for k in 0..k_steps {
        let gap = advantage_of(&psi, pi)?;
        let mut next = ops.grape(&psi);
        if alpha != 0.0 {
            next = next.plus(&gap.scaled(alpha));
        }
        if let Some(e) = noise.eps(k) {
            next = next.plus(e);
        }
        psi = next;
        let a_k = partial_geometric_sum(alpha, k + 1);
        let gap_k = advantage_of(&psi, pi)?;
        gap_errors.push((k + 1, a_true.sup_distance(&gap_k.scaled(1.0 / a_k))));
        psi_errors.push((k + 1, psi_limit.sup_distance(&psi.scaled(1.0 / a_k))));
    }
    let gap = advantage_of(&psi, pi)?;
    Ok(GrapeIterateOut { gap_errors, psi_errors, psi, gap })
}

/// Verify the closed-form decomposition of the gap-accumulating recursion.
///
/// With `S_m = sum_{k=0}^{m} alpha^(m-k) G^k psi_0
///            + sum_{k=0}^{m-1} H^(m-1-k) E_k`
/// (the `k = 0` term of the leading sum being `alpha^m psi_0` itself) and
/// `E_k` the accumulated errors, every iterate satisfies
/// `psi_m = S_m - alpha * pi S_{m-1}`. Returns the largest reconstruction
/// residual over `m = 1..=K`; it should sit at numerical round-off.
pub fn lemma2_identity_check(
    mdp: &TabularMdp,
    pi: &Policy,
    mu: &Policy,
    params: &AlgoParams,
    k_steps: usize,
    noise: &NoiseLedger,
    psi0: &QTable,
) -> Result<f64> {
    check_iteration_inputs(mdp, params, psi0, k_steps)?;
    let alpha = params.alpha;
    let ops = LinearOps::new(mdp, pi, mu, params.lambda, TraceChoice::Retrace)?;
    let zeros = QTable::zeros(mdp.n_states(), mdp.n_actions());

    let mut psi = psi0.clone();
    let mut g_pow = psi0.clone(); // G^m psi0
    let mut lead = psi0.clone(); // sum_{k<=m} alpha^(m-k) G^k psi0
    let mut tail = zeros.clone(); // sum_{k<m} H^(m-1-k) E_k
    let mut e_acc = zeros.clone(); // E_{m-1}
    let mut s_prev = psi0.clone(); // S_{m-1}
    let mut worst = 0.0f64;

    for m in 1..=k_steps {
        let gap = advantage_of(&psi, pi)?;
        let mut next = ops.grape(&psi);
        if alpha != 0.0 {
            next = next.plus(&gap.scaled(alpha));
        }
        if let Some(e) = noise.eps(m - 1) {
            next = next.plus(e);
        }
        psi = next;

        g_pow = ops.grape(&g_pow);
        lead = lead.scaled(alpha).plus(&g_pow);
        e_acc = e_acc.scaled(alpha);
        if let Some(e) = noise.eps(m - 1) {
            e_acc = e_acc.plus(e);
        }
        tail = ops.h_apply(&tail).plus(&e_acc);
        let s = lead.plus(&tail);

        // pi-average of S_{m-1}: subtracting the gap leaves the averaged part.
        let avg_prev = s_prev.minus(&advantage_of(&s_prev, pi)?);
        let recon = s.minus(&avg_prev.scaled(alpha));
        worst = worst.max(psi.sup_distance(&recon));
        s_prev = s;
    }
    Ok(worst)
}

/// Both sides of the finite-time error bound for the normalized gap.
///
/// ```text
/// lhs = ||advantage - gap(psi_K)/A_K||_inf
/// rhs = (2 delta Gamma_K / A_K) ||value - pi psi_0||_inf
///     + (alpha^K / A_K) ||gap(psi_0)||_inf
///     + (2 / A_K) sum_{k<K} delta^(K-1-k) ||E_k||_inf
/// ```
///
/// `Gamma_K` is the cross geometric sum of `alpha` and the contraction
/// modulus `delta`. The middle term carries the start table's own gap,
/// which survives exactly once with weight `alpha^K`; it vanishes for
/// gap-free starts such as the zero table.
pub fn theorem2_bound_sides(
    mdp: &TabularMdp,
    pi: &Policy,
    mu: &Policy,
    params: &AlgoParams,
    k_steps: usize,
    noise: &NoiseLedger,
    psi0: &QTable,
) -> Result<(f64, f64)> {
    check_iteration_inputs(mdp, params, psi0, k_steps)?;
    let alpha = params.alpha;
    let delta = params.delta();
    let out = grape_exact_iterate(mdp, pi, mu, params, k_steps, noise, psi0)?;
    let lhs = out.gap_errors.last().expect("at least one iteration").1;

    let a_k = partial_geometric_sum(alpha, k_steps);
    let gamma_k = cross_geometric_sum(alpha, delta, k_steps);
    let v_true = exact_v_value(mdp, pi)?;
    let v0 = pi.state_values(psi0)?;
    let start_term = 2.0 * delta * gamma_k / a_k * v_true.sup_distance(&v0);
    let gap_term = alpha.powi(k_steps as i32) / a_k * advantage_of(psi0, pi)?.sup_norm();
    let mut noise_term = 0.0;
    let mut e_acc = QTable::zeros(mdp.n_states(), mdp.n_actions());
    for k in 0..k_steps {
        e_acc = e_acc.scaled(alpha);
        if let Some(e) = noise.eps(k) {
            e_acc = e_acc.plus(e);
        }
        noise_term += delta.powi((k_steps - 1 - k) as i32) * e_acc.sup_norm();
    }
    let rhs = start_term + gap_term + 2.0 * noise_term / a_k;
    Ok((lhs, rhs))
}

/// Final normalized-gap error when every iteration is off by the same
/// constant table with entries `epsilon`. For long runs this settles below
/// `2 epsilon / (1 - delta)`.
pub fn constant_error_asymptote(
    mdp: &TabularMdp,
    pi: &Policy,
    mu: &Policy,
    params: &AlgoParams,
    epsilon: f64,
    k_steps: usize,
) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(GrapeError::InvalidParam(format!(
            "epsilon must be finite and non-negative, got {epsilon}"
        )));
    }
    let noise = NoiseLedger::constant(mdp.n_states(), mdp.n_actions(), epsilon, k_steps);
    let psi0 = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let out = grape_exact_iterate(mdp, pi, mu, params, k_steps, &noise, &psi0)?;
    Ok(out.gap_errors.last().expect("at least one iteration").1)
}

/// Weight with which the error injected at iteration `k` contributes to the
/// normalized gap after `k_total` iterations:
/// `A_K^-1 sum_{l=0}^{K-k-1} alpha^(K-k-1-l) delta^l` with `K = k_total`.
pub fn error_decay_coefficient(alpha: f64, delta: f64, k_total: usize, k: usize) -> f64 {
    assert!(k_total >= 1, "need at least one iteration");
    assert!(k < k_total, "error index {k} out of range for {k_total} iterations");
    cross_geometric_sum(alpha, delta, k_total - k) / partial_geometric_sum(alpha, k_total)
}

/// Variance of the normalized error accumulation `E_k / A_k` when the
/// per-iteration errors are independent with unit variance:
/// `(sum_{l=0}^{k} alpha^(2l)) / A_k^2`.
pub fn variance_ratio(alpha: f64, k: usize) -> f64 {
    assert!(k >= 1, "accumulation variance needs k >= 1");
    let a_k = partial_geometric_sum(alpha, k);
    let num = if (alpha - 1.0).abs() < 1e-12 {
        (k + 1) as f64
    } else {
        (1.0 - alpha.powi(2 * (k as i32 + 1))) / (1.0 - alpha * alpha)
    };
    num / (a_k * a_k)
}

/// Long-run limit of [`variance_ratio`]: `(1 - alpha) / (1 + alpha)` for
/// `alpha < 1`, zero at `alpha = 1`.
pub fn variance_ratio_limit(alpha: f64) -> f64 {
    assert!((0.0..=1.0).contains(&alpha), "alpha {alpha} outside [0, 1]");
    if (alpha - 1.0).abs() < 1e-12 {
        0.0
    } else {
        (1.0 - alpha) / (1.0 + alpha)
    }
}

/// Monte-Carlo estimate of [`variance_ratio`]: simulate the accumulation
/// `E_j = alpha * E_{j-1} + eps_j` through `j = k` with standard normal
/// errors and return the sample variance of `E_k / A_k`.
pub fn variance_ratio_mc(alpha: f64, k: usize, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    assert!(k >= 1, "accumulation variance needs k >= 1");
    assert!(samples >= 2, "need at least two samples");
    let a_k = partial_geometric_sum(alpha, k);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let mut e = 0.0;
        for _ in 0..=k {
            let z: f64 = rng.sample(StandardNormal);
            e = alpha * e + z;
        }
        let x = e / a_k;
        sum += x;
        sum_sq += x * x;
    }
    let n = samples as f64;
    let mean = sum / n;
    (sum_sq - n * mean * mean) / (n - 1.0)
}

/// Blend `q` toward `target` with step size `eta` in (0, 1].
pub fn lr_update(q: &QTable, target: &QTable, eta: f64) -> Result<QTable> {
    if !q.same_shape(target) {
        return Err(GrapeError::ShapeMismatch(format!(
            "tables are {}x{} and {}x{}",
            q.n_states(),
            q.n_actions(),
            target.n_states(),
            target.n_actions()
        )));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(GrapeError::InvalidParam(format!("eta {eta} outside (0, 1]")));
    }
    Ok(QTable::from_fn(q.n_states(), q.n_actions(), |x, a| {
        q.get(x, a) + eta * (target.get(x, a) - q.get(x, a))
    }))
}

/// Iterate the learning-rate-damped multi-step backup from the zero table
/// for `k_steps` exact steps. Returns the final sup-norm error against the
/// true action values together with its analytic envelope
/// `(1 - eta (1 - gamma))^K * V_max`.
pub fn lr_error_and_bound(
    mdp: &TabularMdp,
    pi: &Policy,
    mu: &Policy,
    params: &AlgoParams,
    k_steps: usize,
) -> Result<(f64, f64)> {
    params.validate()?;
    let eta = params
        .eta
        .ok_or_else(|| GrapeError::InvalidParam("eta is required for the blended backup".into()))?;
    if k_steps == 0 {
        return Err(GrapeError::InvalidParam("iteration count must be positive".into()));
    }
    let ops = LinearOps::new(mdp, pi, mu, params.lambda, TraceChoice::Retrace)?;
    let q_true = exact_q_value(mdp, pi)?;
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    for _ in 0..k_steps {
        q = lr_update(&q, &ops.retrace(&q), eta)?;
    }
    let err = q.sup_distance(&q_true);
    let bound = (1.0 - eta * (1.0 - mdp.gamma())).powi(k_steps as i32) * mdp.v_max();
    Ok((err, bound))
}

/// The backup rule iterated in the noisy dynamic-programming experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpNoiseAlgo {
    /// Full replacement by the noisy multi-step backup.
    Retrace,
    /// Learning-rate blend toward the noisy multi-step backup.
    RetraceLr,
    /// Gap accumulation with normalization.
    Grape,
}

/// One noisy exact-DP trial: draw target and behavior policies and a
/// standard-normal start table, iterate the chosen backup with fresh
/// N(0, sigma^2) errors each step, and record the advantage-estimate error
/// (root mean square, normalized by its starting level) at every iteration.
pub fn dp_noise_trial(
    mdp: &TabularMdp,
    algo: DpNoiseAlgo,
    params: &AlgoParams,
    iters: usize,
    rng: &mut ChaCha8Rng,
) -> Result<IterationSeries> {
    params.validate()?;
    if (params.gamma - mdp.gamma()).abs() > 1e-12 {
        return Err(GrapeError::InvalidParam(format!(
            "params gamma {} does not match MDP gamma {}",
            params.gamma,
            mdp.gamma()
        )));
    }
    if iters == 0 {
        return Err(GrapeError::InvalidParam("iteration count must be positive".into()));
    }
    let sigma = params.sigma.unwrap_or(0.0);
    let eta = match algo {
        DpNoiseAlgo::RetraceLr => Some(params.eta.ok_or_else(|| {
            GrapeError::InvalidParam("eta is required for the blended backup".into())
        })?),
        _ => None,
    };
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let pi = dirichlet_policy(rng, n, na);
    let mu = dirichlet_policy(rng, n, na);
    let q0 = gaussian_qtable(rng, n, na, 1.0);
    let ops = LinearOps::new(mdp, &pi, &mu, params.lambda, TraceChoice::Retrace)?;
    let a_true = advantage_of(&exact_q_value(mdp, &pi)?, &pi)?;

    let estimate0 = advantage_of(&q0, &pi)?;
    let e0 = crate::metrics::mean_squared_error(&a_true, &estimate0)?.sqrt();
    let mut series = IterationSeries::new("nrmse", 0, params.clone());
    series.push(0, 1.0);

    let mut table = q0;
    for k in 0..iters {
        let mut backed = match algo {
            DpNoiseAlgo::Retrace | DpNoiseAlgo::RetraceLr => ops.retrace(&table),
            DpNoiseAlgo::Grape => {
                let gap = advantage_of(&table, &pi)?;
                let mut next = ops.grape(&table);
                if params.alpha != 0.0 {
                    next = next.plus(&gap.scaled(params.alpha));
                }
                next
            }
        };
        if sigma > 0.0 {
            backed = backed.plus(&gaussian_qtable(rng, n, na, sigma));
        }
        table = match eta {
            Some(eta) => lr_update(&table, &backed, eta)?,
            None => backed,
        };
        let estimate = match algo {
            DpNoiseAlgo::Grape => {
                let a_k = partial_geometric_sum(params.alpha, k + 1);
                advantage_of(&table, &pi)?.scaled(1.0 / a_k)
            }
            _ => advantage_of(&table, &pi)?,
        };
        series.push(k + 1, nrmse(&a_true, &estimate, e0)?);
    }
    Ok(series)
}

/// Repeated noisy-DP trials on one MDP; each trial draws fresh policies,
/// start table, and noise from `rng`.
pub fn retrace_noise_experiment(
    mdp: &TabularMdp,
    algo: DpNoiseAlgo,
    params: &AlgoParams,
    iters: usize,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<IterationSeries>> {
    if trials == 0 {
        return Err(GrapeError::InvalidParam("trial count must be positive".into()));
    }
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut series = dp_noise_trial(mdp, algo, params, iters, rng)?;
        series.trial = t;
        out.push(series);
    }
    Ok(out)
}
