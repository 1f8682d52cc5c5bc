use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use afc_core::scenario::{run_scenario, run_sweep, Scenario, SweepParam};
use afc_core::spectral::{fit_comb, CombParams, ComplexSpectrum, FitWindow};
use afc_core::theory::{analytic_efficiency, echo_time, optimal_depth, TheoryInputs};
use afc_core::{AfcError, Result};

#[derive(Parser)]
#[command(
    name = "afc",
    version,
    about = "Atomic-frequency-comb memory simulation in warm caesium vapour"
)]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenario files.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
    /// Re-run a scenario across values of one parameter.
    Sweep {
        config: PathBuf,
        /// delta_hz, pump_duration_s, od_scale_hz, d or finesse
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0.., allow_negative_numbers = true)]
        values: Vec<f64>,
    },
    /// Evaluate the closed-form efficiency.
    Theory {
        #[arg(long, allow_negative_numbers = true)]
        d: f64,
        #[arg(long = "f")]
        finesse: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        d0: f64,
        /// Tooth spacing in Hz, for the echo time.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Fit a comb to a spectrum table.
    Fit {
        spectrum: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 45e6)]
        gamma: f64,
        #[arg(long, allow_negative_numbers = true)]
        lo: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        hi: Option<f64>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<(Scenario, String)> {
    let (mut s, hash) = Scenario::load(path)?;
    if let Some(seed) = seed {
        s.scenario.seed = seed;
    }
    Ok((s, hash))
}

fn execute(cli: Cli, threads: usize) -> Result<()> {
    match cli.command {
        Command::Run { configs } => {
            let loaded = configs.iter().map(|p| load(p, cli.seed)).collect::<Result<Vec<_>>>()?;
            let results: Vec<Result<Vec<PathBuf>>> = {
                use rayon::prelude::*;
                loaded
                    .par_iter()
                    .map(|(s, hash)| run_scenario(s, hash, threads))
                    .collect()
            };
            let mut first_err = None;
            for ((s, _), r) in loaded.iter().zip(results) {
                match r {
                    Ok(files) => {
                        for f in files {
                            println!("{}: wrote {}", s.scenario.name, f.display());
                        }
                    }
                    Err(e) => {
                        eprintln!("{}: {e}", s.scenario.name);
                        first_err.get_or_insert(e);
                    }
                }
            }
            first_err.map_or(Ok(()), Err)
        }
        Command::Sweep { config, param, values } => {
            let param: SweepParam = param.parse()?;
            let (s, hash) = load(&config, cli.seed)?;
            let path = run_sweep(&s, &hash, param, &values)?;
            print!(
                "{}",
                std::fs::read_to_string(&path).map_err(|e| AfcError::Io {
                    path: path.clone(),
                    source: e
                })?
            );
            Ok(())
        }
        Command::Theory { d, finesse, d0, delta } => {
            let inputs = TheoryInputs::new(d, d0, finesse, delta.unwrap_or(1.0))?;
            let e = analytic_efficiency(&inputs);
            println!("efficiency = {:.9e}", e.eta);
            println!("coupling = {:.9e}", e.coupling);
            println!("reabsorption = {:.9e}", e.reabsorption);
            println!("dephasing = {:.9e}", e.dephasing);
            println!("background = {:.9e}", e.background);
            println!("optimal_d = {:.9e}", optimal_depth(finesse)?);
            if let Some(delta) = delta {
                println!("echo_time_s = {:.9e}", echo_time(delta)?);
            }
            Ok(())
        }
        Command::Fit {
            spectrum,
            delta,
            gamma,
            lo,
            hi,
        } => {
            let text = std::fs::read_to_string(&spectrum).map_err(|e| AfcError::Io {
                path: spectrum.clone(),
                source: e,
            })?;
            let s = ComplexSpectrum::from_table(&text)?;
            let window = FitWindow::new(lo.unwrap_or(s.grid.start), hi.unwrap_or(s.grid.end()))?;
            let fit = fit_comb(&s, window, &CombParams::guess(delta, gamma, 0.0, 0.0))?;
            print!("{}", fit.report());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = cli.threads.unwrap_or_else(rayon::current_num_threads);
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli, threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
