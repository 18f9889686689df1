//! Flag definitions for every subcommand and their resolution against an
//! optional settings file. Precedence: built-in defaults, then file values,
//! then flags.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;

use crate::config::{parse_f64_list, ConfigFile};
use crate::run::{Algo, ControlCfg, DpNoiseCfg, ErrorDecayCfg, NchainEvalCfg, VarianceLimitCfg};

type Section<'a> = Option<&'a BTreeMap<String, String>>;

fn file_value<'a>(section: Section<'a>, key: &str) -> Option<&'a str> {
    section.and_then(|m| m.get(key)).map(String::as_str)
}

fn pick<T>(
    flag: Option<T>,
    section: Section,
    key: &str,
    parse: impl FnOnce(&str) -> Result<T, String>,
    default: Option<T>,
) -> Result<T, String> {
    if let Some(v) = flag {
        return Ok(v);
    }
    if let Some(raw) = file_value(section, key) {
        return parse(raw);
    }
    default.ok_or_else(|| format!("{key}: required setting is missing (flag --{key} or config key)"))
}

fn pick_list(
    flag: &Option<String>,
    section: Section,
    key: &str,
    default: Option<&[f64]>,
) -> Result<Vec<f64>, String> {
    if let Some(raw) = flag.as_deref().or_else(|| file_value(section, key)) {
        parse_f64_list(raw, key)
    } else {
        default
            .map(<[f64]>::to_vec)
            .ok_or_else(|| format!("{key}: required setting is missing (flag --{key} or config key)"))
    }
}

fn parse_num<T: std::str::FromStr>(key: &'static str) -> impl FnOnce(&str) -> Result<T, String> {
    move |raw| raw.trim().parse::<T>().map_err(|_| format!("{key}: cannot parse {raw:?}"))
}

fn check_unit(key: &str, values: &[f64], lo: f64, hi: f64) -> Result<(), String> {
    for &v in values {
        if !(lo..=hi).contains(&v) {
            return Err(format!("{key}: {v} is outside [{lo}, {hi}]"));
        }
    }
    Ok(())
}

fn check_positive(key: &str, n: usize) -> Result<(), String> {
    if n == 0 {
        return Err(format!("{key}: must be at least 1"));
    }
    Ok(())
}

/// The per-algorithm sweep lists: exactly the list the algorithm uses must
/// be present, and the other must be absent.
fn resolve_sweep(
    algo: Algo,
    alpha_flag: &Option<String>,
    eta_flag: &Option<String>,
    section: Section,
) -> Result<(Vec<f64>, Vec<f64>), String> {
    let alpha_given = alpha_flag.is_some() || file_value(section, "alpha").is_some();
    let eta_given = eta_flag.is_some() || file_value(section, "eta").is_some();
    match algo {
        Algo::Grape => {
            if eta_given {
                return Err("eta: only applies to retrace-lr".into());
            }
            let alpha = pick_list(alpha_flag, section, "alpha", None)?;
            check_unit("alpha", &alpha, 0.0, 1.0)?;
            Ok((alpha, Vec::new()))
        }
        Algo::RetraceLr => {
            if alpha_given {
                return Err("alpha: only applies to grape".into());
            }
            let eta = pick_list(eta_flag, section, "eta", None)?;
            for &e in &eta {
                if !(e > 0.0 && e <= 1.0) {
                    return Err(format!("eta: {e} is outside (0, 1]"));
                }
            }
            Ok((Vec::new(), eta))
        }
        Algo::Retrace => {
            if alpha_given || eta_given {
                return Err("alpha/eta: plain retrace DP takes neither".into());
            }
            Ok((Vec::new(), Vec::new()))
        }
    }
}

/// Noisy exact dynamic programming sweeps on the icy gridworld.
#[derive(Debug, Args)]
pub struct DpNoiseArgs {
    /// Settings file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment name; only frozenlake8x8 is available.
    #[arg(long)]
    pub env: Option<String>,
    /// Algorithm: retrace, retrace-lr, or grape.
    #[arg(long)]
    pub algo: Option<String>,
    /// Comma-separated noise standard deviations.
    #[arg(long)]
    pub sigma: Option<String>,
    /// Trace-cut parameter in [0, 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Discount factor in (0, 1).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Comma-separated forgetting factors (grape only).
    #[arg(long)]
    pub alpha: Option<String>,
    /// Comma-separated learning rates (retrace-lr only).
    #[arg(long)]
    pub eta: Option<String>,
    /// Backup sweeps per trial.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Independent trials per grid point.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Master seed; every job derives its own substream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn resolve_dp_noise(args: &DpNoiseArgs, file: Option<&ConfigFile>) -> Result<DpNoiseCfg, String> {
    let section = file.and_then(|f| f.section("dp-noise"));
    let env = pick(
        args.env.clone(),
        section,
        "env",
        |s| Ok(s.to_string()),
        Some("frozenlake8x8".to_string()),
    )?;
    if env != "frozenlake8x8" {
        return Err(format!("env: unknown environment {env:?}; expected frozenlake8x8"));
    }
    let algo_name = pick(args.algo.clone(), section, "algo", |s| Ok(s.to_string()), None)?;
    let algo = Algo::parse(&algo_name, true)?;
    let sigma = pick_list(&args.sigma, section, "sigma", Some(&[0.0, 0.4, 0.8]))?;
    if sigma.iter().any(|s| *s < 0.0 || !s.is_finite()) {
        return Err("sigma: noise levels must be nonnegative".into());
    }
    let lambda = pick(args.lambda, section, "lambda", parse_num("lambda"), Some(0.8))?;
    check_unit("lambda", &[lambda], 0.0, 1.0)?;
    let gamma = pick(args.gamma, section, "gamma", parse_num("gamma"), Some(0.99))?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(format!("gamma: {gamma} is outside (0, 1)"));
    }
    let (alpha, eta) = resolve_sweep(algo, &args.alpha, &args.eta, section)?;
    let iters = pick(args.iters, section, "iters", parse_num("iters"), Some(1000))?;
    check_positive("iters", iters)?;
    let trials = pick(args.trials, section, "trials", parse_num("trials"), Some(100))?;
    check_positive("trials", trials)?;
    let seed = pick(args.seed, section, "seed", parse_num("seed"), Some(0))?;
    let out = pick(
        args.out.clone(),
        section,
        "out",
        |s| Ok(PathBuf::from(s)),
        Some(PathBuf::from(".")),
    )?;
    Ok(DpNoiseCfg { algo, sigma, lambda, gamma, alpha, eta, iters, trials, seed, out })
}

/// Closed-form error-injection weights.
#[derive(Debug, Args)]
pub struct ErrorDecayArgs {
    /// Settings file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated forgetting factors.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Contraction modulus of the iteration in [0, 1).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Total iteration count.
    #[arg(long = "K")]
    pub k_total: Option<usize>,
    /// Output directory for CSV files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn resolve_error_decay(
    args: &ErrorDecayArgs,
    file: Option<&ConfigFile>,
) -> Result<ErrorDecayCfg, String> {
    let section = file.and_then(|f| f.section("error-decay"));
    let alpha = pick_list(&args.alpha, section, "alpha", Some(&[0.0, 0.9, 0.99]))?;
    check_unit("alpha", &alpha, 0.0, 1.0)?;
    let delta = pick(args.delta, section, "delta", parse_num("delta"), Some(0.5))?;
    if !(0.0..1.0).contains(&delta) {
        return Err(format!("delta: {delta} is outside [0, 1)"));
    }
    let k_total = pick(args.k_total, section, "K", parse_num("K"), Some(50))?;
    check_positive("K", k_total)?;
    let out = pick(
        args.out.clone(),
        section,
        "out",
        |s| Ok(PathBuf::from(s)),
        Some(PathBuf::from(".")),
    )?;
    Ok(ErrorDecayCfg { alpha, delta, k_total, out })
}

/// Accumulation-variance limit and Monte-Carlo agreement.
#[derive(Debug, Args)]
pub struct VarianceLimitArgs {
    /// Settings file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated forgetting factors.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Accumulation depth for the finite-depth columns.
    #[arg(long)]
    pub k: Option<usize>,
    /// Monte-Carlo sample count.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Master seed for the Monte-Carlo draw.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn resolve_variance_limit(
    args: &VarianceLimitArgs,
    file: Option<&ConfigFile>,
) -> Result<VarianceLimitCfg, String> {
    let section = file.and_then(|f| f.section("variance-limit"));
    let alpha = pick_list(&args.alpha, section, "alpha", Some(&[0.99]))?;
    check_unit("alpha", &alpha, 0.0, 1.0)?;
    let k = pick(args.k, section, "k", parse_num("k"), Some(2000))?;
    check_positive("k", k)?;
    let samples = pick(args.samples, section, "samples", parse_num("samples"), Some(100_000))?;
    if samples < 2 {
        return Err("samples: need at least 2 draws for a sample variance".into());
    }
    let seed = pick(args.seed, section, "seed", parse_num("seed"), Some(0))?;
    let out = pick(
        args.out.clone(),
        section,
        "out",
        |s| Ok(PathBuf::from(s)),
        Some(PathBuf::from(".")),
    )?;
    Ok(VarianceLimitCfg { alpha, k, samples, seed, out })
}

/// Model-free evaluation on the slippery corridor.
#[derive(Debug, Args)]
pub struct NchainEvalArgs {
    /// Settings file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Algorithm: grape or retrace-lr.
    #[arg(long)]
    pub algo: Option<String>,
    /// Comma-separated forgetting factors (grape only).
    #[arg(long)]
    pub alpha: Option<String>,
    /// Comma-separated learning rates (retrace-lr only).
    #[arg(long)]
    pub eta: Option<String>,
    /// Comma-separated trace-cut parameters.
    #[arg(long)]
    pub lambda: Option<String>,
    /// Probability of a move going the wrong way, in [0, 0.5].
    #[arg(long)]
    pub slip: Option<f64>,
    /// Number of update blocks per trial.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Sampled transitions per block.
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Independent trials per grid point.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Master seed; every job derives its own substream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn resolve_nchain_eval(
    args: &NchainEvalArgs,
    file: Option<&ConfigFile>,
) -> Result<NchainEvalCfg, String> {
    let section = file.and_then(|f| f.section("nchain-eval"));
    let algo_name = pick(args.algo.clone(), section, "algo", |s| Ok(s.to_string()), None)?;
    let algo = Algo::parse(&algo_name, false)?;
    let (alpha, eta) = resolve_sweep(algo, &args.alpha, &args.eta, section)?;
    let lambda = pick_list(&args.lambda, section, "lambda", Some(&[0.0]))?;
    check_unit("lambda", &lambda, 0.0, 1.0)?;
    let slip = pick(args.slip, section, "slip", parse_num("slip"), Some(0.2))?;
    if !(0.0..=0.5).contains(&slip) {
        return Err(format!("slip: {slip} is outside [0, 0.5]"));
    }
    let blocks = pick(args.blocks, section, "blocks", parse_num("blocks"), Some(800))?;
    check_positive("blocks", blocks)?;
    let block_size =
        pick(args.block_size, section, "block-size", parse_num("block-size"), Some(250))?;
    check_positive("block-size", block_size)?;
    let trials = pick(args.trials, section, "trials", parse_num("trials"), Some(24))?;
    check_positive("trials", trials)?;
    let seed = pick(args.seed, section, "seed", parse_num("seed"), Some(0))?;
    let out = pick(
        args.out.clone(),
        section,
        "out",
        |s| Ok(PathBuf::from(s)),
        Some(PathBuf::from(".")),
    )?;
    Ok(NchainEvalCfg { algo, alpha, eta, lambda, slip, blocks, block_size, trials, seed, out })
}

/// Replay-driven control on the icy gridworld.
#[derive(Debug, Args)]
pub struct FrozenlakeControlArgs {
    /// Settings file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Algorithm: grape or retrace-lr.
    #[arg(long)]
    pub algo: Option<String>,
    /// Comma-separated forgetting factors (grape only).
    #[arg(long)]
    pub alpha: Option<String>,
    /// Comma-separated learning rates (retrace-lr only).
    #[arg(long)]
    pub eta: Option<String>,
    /// Comma-separated trace-cut parameters.
    #[arg(long)]
    pub lambda: Option<String>,
    /// Transitions per value update window.
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Comma-separated softmax temperatures.
    #[arg(long)]
    pub beta: Option<String>,
    /// Total environment steps per trial.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Independent trials per grid point.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Master seed; every job derives its own substream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Environment steps between policy updates.
    #[arg(long)]
    pub policy_period: Option<usize>,
    /// Replay capacity in transitions.
    #[arg(long)]
    pub buffer_capacity: Option<usize>,
    /// Output directory for CSV files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

const BETA_GRID: &[f64] = &[0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];

pub fn resolve_frozenlake_control(
    args: &FrozenlakeControlArgs,
    file: Option<&ConfigFile>,
) -> Result<ControlCfg, String> {
    let section = file.and_then(|f| f.section("frozenlake-control"));
    let algo_name = pick(args.algo.clone(), section, "algo", |s| Ok(s.to_string()), None)?;
    let algo = Algo::parse(&algo_name, false)?;
    let (alpha, eta) = resolve_sweep(algo, &args.alpha, &args.eta, section)?;
    let lambda = pick_list(&args.lambda, section, "lambda", Some(&[0.0]))?;
    check_unit("lambda", &lambda, 0.0, 1.0)?;
    let n = pick(args.n, section, "N", parse_num("N"), Some(250))?;
    check_positive("N", n)?;
    let beta = pick_list(&args.beta, section, "beta", Some(BETA_GRID))?;
    if beta.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err("beta: temperatures must be positive and finite".into());
    }
    let steps = pick(args.steps, section, "steps", parse_num("steps"), Some(500_000))?;
    let trials = pick(args.trials, section, "trials", parse_num("trials"), Some(6))?;
    check_positive("trials", trials)?;
    let seed = pick(args.seed, section, "seed", parse_num("seed"), Some(0))?;
    let policy_period = pick(
        args.policy_period,
        section,
        "policy-period",
        parse_num("policy-period"),
        Some(100_000),
    )?;
    check_positive("policy-period", policy_period)?;
    let buffer_capacity = pick(
        args.buffer_capacity,
        section,
        "buffer-capacity",
        parse_num("buffer-capacity"),
        Some(500_000),
    )?;
    if steps < policy_period {
        return Err(format!(
            "steps: {steps} is below the policy update period {policy_period}"
        ));
    }
    if buffer_capacity < n {
        return Err(format!(
            "buffer-capacity: {buffer_capacity} cannot hold one update window of {n}"
        ));
    }
    let out = pick(
        args.out.clone(),
        section,
        "out",
        |s| Ok(PathBuf::from(s)),
        Some(PathBuf::from(".")),
    )?;
    Ok(ControlCfg {
        algo,
        alpha,
        eta,
        lambda,
        n,
        beta,
        steps,
        trials,
        seed,
        policy_period,
        buffer_capacity,
        out,
    })
}

/// Verification suite selection.
#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Settings file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Suite: lemmas, theorems, or estimators.
    #[arg(long)]
    pub suite: Option<String>,
    /// Master seed for the randomized checks.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn resolve_verify(args: &VerifyArgs, file: Option<&ConfigFile>) -> Result<(String, u64), String> {
    let section = file.and_then(|f| f.section("verify"));
    let suite = pick(args.suite.clone(), section, "suite", |s| Ok(s.to_string()), None)?;
    if !["lemmas", "theorems", "estimators"].contains(&suite.as_str()) {
        return Err(format!("suite: unknown suite {suite:?}; expected lemmas, theorems, or estimators"));
    }
    let seed = pick(args.seed, section, "seed", parse_num("seed"), Some(0))?;
    Ok((suite, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn no_flags() -> DpNoiseArgs {
        DpNoiseArgs {
            config: None,
            env: None,
            algo: None,
            sigma: None,
            lambda: None,
            gamma: None,
            alpha: None,
            eta: None,
            iters: None,
            trials: None,
            seed: None,
            out: None,
        }
    }

    #[test]
    fn defaults_fill_in_and_algo_is_required() {
        let mut args = no_flags();
        assert!(resolve_dp_noise(&args, None).unwrap_err().starts_with("algo"));
        args.algo = Some("retrace".into());
        let cfg = resolve_dp_noise(&args, None).unwrap();
        assert_eq!(cfg.sigma, vec![0.0, 0.4, 0.8]);
        assert_eq!(cfg.lambda, 0.8);
        assert_eq!(cfg.gamma, 0.99);
        assert_eq!(cfg.iters, 1000);
        assert_eq!(cfg.trials, 100);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn flags_override_file_values() {
        let file = parse_config("[dp-noise]\nalgo = grape\nalpha = 0.5\ntrials = 7\nseed = 3\n")
            .unwrap();
        let mut args = no_flags();
        args.trials = Some(9);
        let cfg = resolve_dp_noise(&args, Some(&file)).unwrap();
        assert_eq!(cfg.algo, Algo::Grape);
        assert_eq!(cfg.alpha, vec![0.5]);
        assert_eq!(cfg.trials, 9, "flag beats file");
        assert_eq!(cfg.seed, 3, "file beats default");
    }

    #[test]
    fn sweeps_must_match_the_algorithm() {
        let mut args = no_flags();
        args.algo = Some("grape".into());
        assert!(resolve_dp_noise(&args, None).unwrap_err().starts_with("alpha"));
        args.alpha = Some("0.5,0.9".into());
        args.eta = Some("1.0".into());
        assert!(resolve_dp_noise(&args, None).unwrap_err().starts_with("eta"));
        args.eta = None;
        assert_eq!(resolve_dp_noise(&args, None).unwrap().alpha, vec![0.5, 0.9]);

        args.algo = Some("retrace".into());
        assert!(resolve_dp_noise(&args, None).is_err(), "retrace takes no alpha");
    }

    #[test]
    fn ranges_are_validated() {
        let mut args = no_flags();
        args.algo = Some("retrace".into());
        args.gamma = Some(1.0);
        assert!(resolve_dp_noise(&args, None).unwrap_err().starts_with("gamma"));
        let mut args = no_flags();
        args.algo = Some("retrace".into());
        args.lambda = Some(1.5);
        assert!(resolve_dp_noise(&args, None).unwrap_err().starts_with("lambda"));
        let mut args = no_flags();
        args.algo = Some("retrace".into());
        args.sigma = Some("-0.1".into());
        assert!(resolve_dp_noise(&args, None).unwrap_err().starts_with("sigma"));
    }

    #[test]
    fn control_consistency_checks() {
        let mut args = FrozenlakeControlArgs {
            config: None,
            algo: Some("grape".into()),
            alpha: Some("0.999".into()),
            eta: None,
            lambda: None,
            n: None,
            beta: None,
            steps: None,
            trials: None,
            seed: None,
            policy_period: None,
            buffer_capacity: None,
            out: None,
        };
        let cfg = resolve_frozenlake_control(&args, None).unwrap();
        assert_eq!(cfg.beta.len(), 10);
        assert_eq!(cfg.n, 250);
        assert_eq!(cfg.steps, 500_000);
        args.steps = Some(50_000);
        assert!(resolve_frozenlake_control(&args, None).unwrap_err().starts_with("steps"));
        args.steps = None;
        args.buffer_capacity = Some(100);
        assert!(resolve_frozenlake_control(&args, None)
            .unwrap_err()
            .starts_with("buffer-capacity"));
    }

    #[test]
    fn verify_suite_names_are_checked() {
        let args = VerifyArgs { config: None, suite: Some("lemmas".into()), seed: None };
        assert_eq!(resolve_verify(&args, None).unwrap(), ("lemmas".to_string(), 0));
        let args = VerifyArgs { config: None, suite: Some("bogus".into()), seed: None };
        assert!(resolve_verify(&args, None).is_err());
    }
}
