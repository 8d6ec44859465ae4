use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use relaybf::alternating::AltStatus;
use relaybf::harness::{
    derive_seed, emit_ps_sensitivity, emit_reports, run_eve_distribution, run_power_sweep,
    run_ps_sensitivity, run_self_check, solve_instance, trial_channels, ExperimentSpec,
    HarnessError,
};
use relaybf::linalg::CMat;
use relaybf::rounding::RoundingConfig;
use relaybf::sysmodel::{snr_bob, snr_eve_exact, EveError};

const EXIT_CONFIG: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_CHECK: u8 = 3;
const EXIT_SOLVER: u8 = 4;

#[derive(Parser)]
#[command(
    name = "relaybf",
    version,
    about = "Robust joint source/relay beamforming experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one channel draw and print the design as JSON.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Root seed; defaults to the config's `root_seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Robust vs non-robust power over the threshold grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Eavesdropper SNR under sampled channel errors.
    EveDist {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Plain isotropic-start solves over several initialization powers.
    PsSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 1.0, 10.0, 100.0])]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Run the invariant suites.
    Check {
        #[arg(long, value_delimiter = ',', default_values_t = vec![2, 3])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(config: &PathBuf, out: Option<PathBuf>) -> Result<ExperimentSpec, HarnessError> {
    let mut spec = ExperimentSpec::load(config)?;
    if let Some(dir) = out {
        spec.output_dir = dir;
    }
    Ok(spec)
}

fn fail(e: HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(match e {
        HarnessError::Config(_) => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    })
}

fn entries(x: &CMat) -> Vec<[f64; 2]> {
    x.iter().map(|z| [z.re, z.im]).collect()
}

fn solve(config: PathBuf, seed: Option<u64>) -> Result<ExitCode, HarnessError> {
    let mut spec = load(&config, None)?;
    if let Some(s) = seed {
        spec.root_seed = s;
    }
    let cfg = spec.base_system();
    let (channel_seed, ch) = trial_channels(&spec, 0);
    let rc = RoundingConfig {
        seed: derive_seed(spec.root_seed, &[1, 0, 0]),
        ..spec.rounding.clone()
    };
    let out = solve_instance(&ch, &cfg, &spec.alt, &rc, spec.refine_rounds, spec.restarts)?;
    let rounded = out.rounded.as_ref();
    let report = json!({
        "root_seed": spec.root_seed,
        "channel_seed": channel_seed,
        "status": out.relaxed.status,
        "iterations": out.total_iterations,
        "refinements": out.refinements,
        "xi_trace": out.relaxed.xi_trace,
        "relaxed_power": out.relaxed_power(),
        "rounded": rounded.map(|r| json!({
            "feasible": r.feasible,
            "total_power": r.total_power,
            "source": r.source,
            "alpha": r.alpha,
            "beta": r.beta,
            "snr_b": snr_bob(&r.pair, &ch, &cfg).ok(),
            "snr_e_nominal": snr_eve_exact(&r.pair, &ch, &cfg, &EveError { delta: CMat::zeros(1, cfg.n_relay) }),
            "q": entries(&r.pair.q),
            "w": entries(&r.pair.w_mat),
        })),
    });
    emit(&serde_json::to_string_pretty(&report).expect("json values serialize"));
    Ok(match out.relaxed.status {
        AltStatus::Failed => ExitCode::from(EXIT_SOLVER),
        AltStatus::Infeasible => ExitCode::from(EXIT_INFEASIBLE),
        _ if out.rounded_power().is_none() => ExitCode::from(EXIT_INFEASIBLE),
        _ => ExitCode::SUCCESS,
    })
}

/// Prints to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        emit(&p.display().to_string());
    }
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Solve { config, seed } => solve(config, seed),
        Command::Sweep { config, out, quiet } => {
            let spec = load(&config, out)?;
            let records = run_power_sweep(&spec, !quiet)?;
            print_paths(&emit_reports(&spec, Some(&records), None)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::EveDist { config, out, quiet } => {
            let spec = load(&config, out)?;
            let dist = run_eve_distribution(&spec, !quiet)?;
            print_paths(&emit_reports(&spec, None, Some(&dist))?);
            Ok(ExitCode::SUCCESS)
        }
        Command::PsSweep {
            config,
            values,
            out,
            quiet,
        } => {
            let spec = load(&config, out)?;
            let records = run_ps_sensitivity(&spec, &values, !quiet)?;
            print_paths(&[emit_ps_sensitivity(&spec, &records)?]);
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { dims, trials, seed } => {
            if dims.is_empty() || dims.contains(&0) || trials == 0 {
                return Err(HarnessError::Config(
                    "dims must be positive and trials >= 1".into(),
                ));
            }
            let report = run_self_check(&dims, trials, seed);
            emit(&serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK)
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    run(cli).unwrap_or_else(fail)
}
