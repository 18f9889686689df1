use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use grape_cli::args::{
    resolve_dp_noise, resolve_error_decay, resolve_frozenlake_control, resolve_nchain_eval,
    resolve_variance_limit, resolve_verify, DpNoiseArgs, ErrorDecayArgs, FrozenlakeControlArgs,
    NchainEvalArgs, VarianceLimitArgs, VerifyArgs,
};
use grape_cli::config::{load_config, ConfigFile};
use grape_cli::run::{
    best_beta_rows, run_dp_noise, run_error_decay, run_frozenlake_control, run_nchain_eval,
    run_variance_limit, run_verify, write_outputs,
};

/// Tabular laboratory for gap-increasing off-policy evaluation.
#[derive(Debug, Parser)]
#[command(name = "grape", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Noisy exact dynamic-programming sweeps on the icy gridworld.
    DpNoise(DpNoiseArgs),
    /// Closed-form weights that past errors contribute to the final table.
    ErrorDecay(ErrorDecayArgs),
    /// Accumulation-variance ratio: closed forms and a Monte-Carlo check.
    VarianceLimit(VarianceLimitArgs),
    /// Model-free evaluation on the slippery corridor.
    NchainEval(NchainEvalArgs),
    /// Replay-driven control on the icy gridworld.
    FrozenlakeControl(FrozenlakeControlArgs),
    /// Run a verification suite and report one line per check.
    Verify(VerifyArgs),
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFY: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(EXIT_CONFIG)
                }
            };
        }
    };
    match cli.cmd {
        Cmd::DpNoise(a) => experiment(a.config.clone(), |f| resolve_dp_noise(&a, f), |cfg| {
            let rows = run_dp_noise(cfg)?;
            write_outputs(&cfg.out, "dp-noise", &rows, true, &[])
        }),
        Cmd::ErrorDecay(a) => experiment(a.config.clone(), |f| resolve_error_decay(&a, f), |cfg| {
            let rows = run_error_decay(cfg)?;
            write_outputs(&cfg.out, "error-decay", &rows, false, &[])
        }),
        Cmd::VarianceLimit(a) => {
            experiment(a.config.clone(), |f| resolve_variance_limit(&a, f), |cfg| {
                let rows = run_variance_limit(cfg)?;
                write_outputs(&cfg.out, "variance-limit", &rows, false, &[])
            })
        }
        Cmd::NchainEval(a) => {
            experiment(a.config.clone(), |f| resolve_nchain_eval(&a, f), |cfg| {
                let rows = run_nchain_eval(cfg)?;
                write_outputs(&cfg.out, "nchain-eval", &rows, true, &[])
            })
        }
        Cmd::FrozenlakeControl(a) => {
            experiment(a.config.clone(), |f| resolve_frozenlake_control(&a, f), |cfg| {
                let rows = run_frozenlake_control(cfg)?;
                let best = best_beta_rows(&rows)?;
                write_outputs(&cfg.out, "frozenlake-control", &rows, true, &[("best_beta", best)])
            })
        }
        Cmd::Verify(a) => verify(a),
    }
}

/// Load the optional settings file, resolve the configuration, run the
/// experiment, and report the files it wrote. Configuration problems exit
/// with 1, runtime failures with 2.
fn experiment<C>(
    config_path: Option<PathBuf>,
    resolve: impl FnOnce(Option<&ConfigFile>) -> Result<C, String>,
    run: impl FnOnce(&C) -> anyhow::Result<Vec<PathBuf>>,
) -> ExitCode {
    let cfg = match resolve_with_file(config_path.as_deref(), resolve) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("configuration error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(&cfg) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("run failed: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn resolve_with_file<C>(
    config_path: Option<&Path>,
    resolve: impl FnOnce(Option<&ConfigFile>) -> Result<C, String>,
) -> Result<C, String> {
    let file = match config_path {
        Some(path) => Some(load_config(path)?),
        None => None,
    };
    resolve(file.as_ref())
}

fn verify(args: VerifyArgs) -> ExitCode {
    let (suite, seed) = match resolve_with_file(args.config.as_deref(), |f| resolve_verify(&args, f))
    {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("configuration error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run_verify(&suite, seed) {
        Ok((reports, all_pass)) => {
            for report in &reports {
                println!("{}", report.line());
            }
            if all_pass {
                println!("suite {suite}: all {} checks passed", reports.len());
                ExitCode::SUCCESS
            } else {
                let failed = reports.iter().filter(|r| !r.pass).count();
                println!("suite {suite}: {failed} of {} checks failed", reports.len());
                ExitCode::from(EXIT_VERIFY)
            }
        }
        Err(e) => {
            eprintln!("run failed: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
