//! Resolved experiment settings and their drivers: fan runs out over a
//! worker pool, merge rows in deterministic job order, and write the CSV
//! artifacts.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;

use grape_core::dp_lab::{
    error_decay_coefficient, dp_noise_trial, variance_ratio, variance_ratio_limit,
    variance_ratio_mc, DpNoiseAlgo, IterationSeries,
};
use grape_core::envs::{Env, FrozenLakeEnv, NChainEnv, StartState, NCHAIN_STATES};
use grape_core::mdp::{AlgoParams, Policy};
use grape_core::model_free::{frozenlake_control_run, nchain_eval_run, MfAlgo};
use grape_core::sample::substream;
use grape_core::verify::{verify_estimators, verify_lemmas, verify_theorems, CheckReport};

use crate::aggregate::{select_best_beta, summarize};
use crate::rows::{write_rows, ResultRow};

/// Algorithm selector shared by the experiment subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Retrace,
    RetraceLr,
    Grape,
}

impl Algo {
    pub fn parse(name: &str, allow_plain: bool) -> Result<Self, String> {
        match name {
            "retrace" if allow_plain => Ok(Algo::Retrace),
            "retrace-lr" => Ok(Algo::RetraceLr),
            "grape" => Ok(Algo::Grape),
            other => Err(format!(
                "algo: unknown algorithm {other:?}; expected {}retrace-lr or grape",
                if allow_plain { "retrace, " } else { "" }
            )),
        }
    }

    fn tag(self) -> u64 {
        match self {
            Algo::Retrace => 0,
            Algo::RetraceLr => 1,
            Algo::Grape => 2,
        }
    }
}

/// The per-run sweep values: forgetting factors for the gap algorithm,
/// learning rates for the blended baseline, a single unparameterized run
/// for plain dynamic programming.
fn sweep_values(algo: Algo, alpha: &[f64], eta: &[f64]) -> Vec<Option<f64>> {
    match algo {
        Algo::Grape => alpha.iter().copied().map(Some).collect(),
        Algo::RetraceLr => eta.iter().copied().map(Some).collect(),
        Algo::Retrace => vec![None],
    }
}

fn build_params(
    algo: Algo,
    gamma: f64,
    lambda: f64,
    sweep: Option<f64>,
    sigma: Option<f64>,
    beta: Option<f64>,
) -> Result<AlgoParams> {
    let mut params = match algo {
        Algo::Grape => AlgoParams::new(gamma, lambda, sweep.expect("sweep is alpha"))?,
        Algo::RetraceLr => {
            AlgoParams::new(gamma, lambda, 0.0)?.with_eta(sweep.expect("sweep is eta"))?
        }
        Algo::Retrace => AlgoParams::new(gamma, lambda, 0.0)?,
    };
    if let Some(s) = sigma {
        params = params.with_sigma(s)?;
    }
    if let Some(b) = beta {
        params = params.with_beta(b)?;
    }
    Ok(params)
}

fn series_to_rows(
    experiment: &str,
    env: Option<&str>,
    algo: Algo,
    params: &AlgoParams,
    n: Option<usize>,
    trial: usize,
    series: &IterationSeries,
) -> Vec<ResultRow> {
    series
        .points()
        .iter()
        .map(|&(step, value)| ResultRow {
            experiment: experiment.to_string(),
            env: env.map(str::to_string),
            alpha: (algo == Algo::Grape).then_some(params.alpha),
            lambda: Some(params.lambda),
            eta: params.eta,
            beta: params.beta,
            sigma: params.sigma,
            n,
            trial: Some(trial),
            step: Some(step),
            metric: series.metric.clone(),
            value,
        })
        .collect()
}

fn flatten_job_rows(rows: Vec<Vec<ResultRow>>) -> Vec<ResultRow> {
    rows.into_iter().flatten().collect()
}

fn word(v: Option<f64>) -> u64 {
    v.map(f64::to_bits).unwrap_or(u64::MAX)
}

/// Noisy exact dynamic programming on the icy gridworld.
#[derive(Debug, Clone)]
pub struct DpNoiseCfg {
    pub algo: Algo,
    pub sigma: Vec<f64>,
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: Vec<f64>,
    pub eta: Vec<f64>,
    pub iters: usize,
    pub trials: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn run_dp_noise(cfg: &DpNoiseCfg) -> Result<Vec<ResultRow>> {
    let mdp = FrozenLakeEnv::new(true).mdp(cfg.gamma)?;
    let dp_algo = match cfg.algo {
        Algo::Retrace => DpNoiseAlgo::Retrace,
        Algo::RetraceLr => DpNoiseAlgo::RetraceLr,
        Algo::Grape => DpNoiseAlgo::Grape,
    };
    let mut jobs = Vec::new();
    for &sigma in &cfg.sigma {
        for sweep in sweep_values(cfg.algo, &cfg.alpha, &cfg.eta) {
            for trial in 0..cfg.trials {
                jobs.push((sigma, sweep, trial));
            }
        }
    }
    let per_job: Vec<Vec<ResultRow>> = jobs
        .par_iter()
        .map(|&(sigma, sweep, trial)| -> Result<Vec<ResultRow>> {
            let params =
                build_params(cfg.algo, cfg.gamma, cfg.lambda, sweep, Some(sigma), None)?;
            let mut rng = substream(
                cfg.seed,
                &[0x11, cfg.algo.tag(), sigma.to_bits(), word(sweep), trial as u64],
            );
            let series = dp_noise_trial(&mdp, dp_algo, &params, cfg.iters, &mut rng)?;
            Ok(series_to_rows(
                "dp-noise",
                Some("frozenlake8x8"),
                cfg.algo,
                &params,
                None,
                trial,
                &series,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(flatten_job_rows(per_job))
}

/// Closed-form error-injection weights across iterations.
#[derive(Debug, Clone)]
pub struct ErrorDecayCfg {
    pub alpha: Vec<f64>,
    pub delta: f64,
    pub k_total: usize,
    pub out: PathBuf,
}

pub fn run_error_decay(cfg: &ErrorDecayCfg) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::with_capacity(cfg.alpha.len() * cfg.k_total);
    for &alpha in &cfg.alpha {
        for k in 0..cfg.k_total {
            rows.push(ResultRow {
                experiment: "error-decay".into(),
                env: None,
                alpha: Some(alpha),
                lambda: None,
                eta: None,
                beta: None,
                sigma: None,
                n: None,
                trial: None,
                step: Some(k),
                metric: "decay_coefficient".into(),
                value: error_decay_coefficient(alpha, cfg.delta, cfg.k_total, k),
            });
        }
    }
    Ok(rows)
}

/// Accumulation-variance ratios: analytic limit, closed form at a finite
/// depth, and a Monte-Carlo estimate.
#[derive(Debug, Clone)]
pub struct VarianceLimitCfg {
    pub alpha: Vec<f64>,
    pub k: usize,
    pub samples: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn run_variance_limit(cfg: &VarianceLimitCfg) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::with_capacity(cfg.alpha.len() * 3);
    for &alpha in &cfg.alpha {
        let base = ResultRow {
            experiment: "variance-limit".into(),
            env: None,
            alpha: Some(alpha),
            lambda: None,
            eta: None,
            beta: None,
            sigma: None,
            n: None,
            trial: None,
            step: None,
            metric: String::new(),
            value: 0.0,
        };
        let mut limit = base.clone();
        limit.metric = "variance_ratio_limit".into();
        limit.value = variance_ratio_limit(alpha);
        rows.push(limit);

        let mut closed = base.clone();
        closed.step = Some(cfg.k);
        closed.metric = "variance_ratio".into();
        closed.value = variance_ratio(alpha, cfg.k);
        rows.push(closed);

        let mut rng = substream(cfg.seed, &[0x12, alpha.to_bits()]);
        let mut mc = base;
        mc.step = Some(cfg.k);
        mc.metric = "variance_ratio_mc".into();
        mc.value = variance_ratio_mc(alpha, cfg.k, cfg.samples, &mut rng);
        rows.push(mc);
    }
    Ok(rows)
}

/// Model-free evaluation on the slippery corridor.
#[derive(Debug, Clone)]
pub struct NchainEvalCfg {
    pub algo: Algo,
    pub alpha: Vec<f64>,
    pub eta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub slip: f64,
    pub blocks: usize,
    pub block_size: usize,
    pub trials: usize,
    pub seed: u64,
    pub out: PathBuf,
}

/// Fixed evaluation setup on the corridor: a mildly right-leaning target
/// policy evaluated from uniform behavior.
pub fn corridor_policies() -> (Policy, Policy) {
    let pi = Policy::new(NCHAIN_STATES, 2, [0.35, 0.65].repeat(NCHAIN_STATES))
        .expect("valid corridor policy");
    let mu = Policy::uniform(NCHAIN_STATES, 2);
    (pi, mu)
}

pub fn run_nchain_eval(cfg: &NchainEvalCfg) -> Result<Vec<ResultRow>> {
    let (pi, mu) = corridor_policies();
    let mf_algo = match cfg.algo {
        Algo::Grape => MfAlgo::Grape,
        Algo::RetraceLr => MfAlgo::RetraceLr,
        Algo::Retrace => return Err(anyhow!("plain dynamic programming has no sampled run")),
    };
    let mut jobs = Vec::new();
    for sweep in sweep_values(cfg.algo, &cfg.alpha, &cfg.eta) {
        for &lambda in &cfg.lambda {
            for trial in 0..cfg.trials {
                jobs.push((sweep, lambda, trial));
            }
        }
    }
    let per_job: Vec<Vec<ResultRow>> = jobs
        .par_iter()
        .map(|&(sweep, lambda, trial)| -> Result<Vec<ResultRow>> {
            let params = build_params(cfg.algo, 0.99, lambda, sweep, None, None)?;
            let mut env = NChainEnv::new(cfg.slip, StartState::Center)?;
            let mut rng = substream(
                cfg.seed,
                &[0x13, cfg.algo.tag(), word(sweep), lambda.to_bits(), trial as u64],
            );
            let series = nchain_eval_run(
                &mut env,
                &pi,
                &mu,
                &params,
                mf_algo,
                cfg.blocks,
                cfg.block_size,
                &mut rng,
            )?;
            Ok(series_to_rows("nchain-eval", Some("nchain"), cfg.algo, &params, None, trial, &series))
        })
        .collect::<Result<_>>()?;
    Ok(flatten_job_rows(per_job))
}

/// Replay-driven control on the icy gridworld with softmax policy updates.
#[derive(Debug, Clone)]
pub struct ControlCfg {
    pub algo: Algo,
    pub alpha: Vec<f64>,
    pub eta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub n: usize,
    pub beta: Vec<f64>,
    pub steps: usize,
    pub trials: usize,
    pub seed: u64,
    pub policy_period: usize,
    pub buffer_capacity: usize,
    pub out: PathBuf,
}

pub fn run_frozenlake_control(cfg: &ControlCfg) -> Result<Vec<ResultRow>> {
    let mf_algo = match cfg.algo {
        Algo::Grape => MfAlgo::Grape,
        Algo::RetraceLr => MfAlgo::RetraceLr,
        Algo::Retrace => return Err(anyhow!("plain dynamic programming has no sampled run")),
    };
    let mut jobs = Vec::new();
    for sweep in sweep_values(cfg.algo, &cfg.alpha, &cfg.eta) {
        for &lambda in &cfg.lambda {
            for &beta in &cfg.beta {
                for trial in 0..cfg.trials {
                    jobs.push((sweep, lambda, beta, trial));
                }
            }
        }
    }
    let per_job: Vec<Vec<ResultRow>> = jobs
        .par_iter()
        .map(|&(sweep, lambda, beta, trial)| -> Result<Vec<ResultRow>> {
            let params = build_params(cfg.algo, 0.99, lambda, sweep, None, Some(beta))?;
            let mut env = FrozenLakeEnv::new(true);
            let mut rng = substream(
                cfg.seed,
                &[
                    0x14,
                    cfg.algo.tag(),
                    word(sweep),
                    lambda.to_bits(),
                    beta.to_bits(),
                    trial as u64,
                ],
            );
            let out = frozenlake_control_run(
                &mut env,
                &params,
                mf_algo,
                cfg.steps,
                cfg.n,
                cfg.policy_period,
                cfg.buffer_capacity,
                &mut rng,
            )?;
            if out.skipped_updates > 0 {
                eprintln!(
                    "warning: {} value updates skipped (replay shorter than the window)",
                    out.skipped_updates
                );
            }
            Ok(series_to_rows(
                "frozenlake-control",
                Some("frozenlake8x8"),
                cfg.algo,
                &params,
                Some(cfg.n),
                trial,
                &out.series,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(flatten_job_rows(per_job))
}

/// Rows naming the winning temperature per hyperparameter setting.
pub fn best_beta_rows(rows: &[ResultRow]) -> Result<Vec<ResultRow>> {
    let choices = select_best_beta(rows)?;
    let mut out = Vec::with_capacity(choices.len() * 2);
    for choice in choices {
        let base = ResultRow {
            experiment: "frozenlake-control".into(),
            env: Some("frozenlake8x8".into()),
            alpha: choice.alpha,
            lambda: choice.lambda,
            eta: choice.eta,
            beta: Some(choice.beta),
            sigma: None,
            n: choice.n,
            trial: None,
            step: None,
            metric: String::new(),
            value: 0.0,
        };
        let mut asym = base.clone();
        asym.metric = "best_beta_asymptotic_mean".into();
        asym.value = choice.asymptotic_mean;
        out.push(asym);
        let mut fin = base;
        fin.metric = "best_beta_final_mean".into();
        fin.value = choice.final_mean;
        out.push(fin);
    }
    Ok(out)
}

/// Write the raw rows plus optional summary and extra derived files.
/// Returns the written paths in order.
pub fn write_outputs(
    out_dir: &Path,
    experiment: &str,
    rows: &[ResultRow],
    with_summary: bool,
    extra: &[(&str, Vec<ResultRow>)],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let mut written = Vec::new();
    let raw_path = out_dir.join(format!("{experiment}.csv"));
    write_rows(&raw_path, rows)?;
    written.push(raw_path);
    if with_summary {
        let summary = summarize(rows)?;
        let summary_path = out_dir.join(format!("{experiment}_summary.csv"));
        write_rows(&summary_path, &summary)?;
        written.push(summary_path);
    }
    for (suffix, extra_rows) in extra {
        let path = out_dir.join(format!("{experiment}_{suffix}.csv"));
        write_rows(&path, extra_rows)?;
        written.push(path);
    }
    Ok(written)
}

/// Run one verification suite; returns its reports and whether all passed.
pub fn run_verify(suite: &str, seed: u64) -> Result<(Vec<CheckReport>, bool)> {
    let reports = match suite {
        "lemmas" => verify_lemmas(seed)?,
        "theorems" => verify_theorems(seed)?,
        "estimators" => verify_estimators(seed)?,
        other => return Err(anyhow!("unknown suite {other:?}")),
    };
    let all_pass = reports.iter().all(|r| r.pass);
    Ok((reports, all_pass))
}
