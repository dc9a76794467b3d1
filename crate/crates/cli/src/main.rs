//! `sdrlmi`: synthesize, analyze and simulate state-dependent controllers.
//!
//! Exit codes: 0 success, 1 infeasible, 2 configuration or input data,
//! 3 usage, 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdrlmi::synth::Mode;
use sdrlmi::Result;

use config::ToolkitConfig;

#[derive(Parser)]
#[command(name = "sdrlmi", version, about = "LMI-based stabilization of state-dependent nonlinear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in system: example1, example3 or quadrotor.
    #[arg(long)]
    example: Option<String>,
}

impl Source {
    fn load(&self) -> Result<ToolkitConfig> {
        match (&self.config, &self.example) {
            (Some(path), _) => ToolkitConfig::load(path),
            (None, Some(name)) => ToolkitConfig::example(name),
            (None, None) => unreachable!("clap requires one source"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the synthesis LMI and write result.json.
    Synth {
        #[command(flatten)]
        source: Source,
        /// model, model-sat, data or data-sat.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        radius: Option<f64>,
        /// Saturation levels, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        u_bar: Option<Vec<f64>>,
        /// Dataset manifest; otherwise data is generated from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Seed for generated data.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Robustness certificate and sublevel ROA for a stored result.
    Analyze {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_sublevel: bool,
    },
    /// Closed-loop rollout or one-step phase portrait.
    Simulate {
        #[command(flatten)]
        source: Source,
        /// Stored result supplying K and saturation levels; open loop without it.
        #[arg(long)]
        result: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        steps: Option<usize>,
        /// Per-component bound of a uniform additive disturbance.
        #[arg(long)]
        disturbance: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        phase_portrait: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured experiments and write a dataset.
    Gendata {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the configuration as TOML.
    PrintConfig {
        #[command(flatten)]
        source: Source,
    },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { source, mode, radius, u_bar, data, seed, out } => {
            commands::synth(&source.load()?, commands::SynthArgs { mode, radius, u_bar, data, seed, out })
        }
        Command::Analyze { source, result, data, seed, out, no_sublevel } => commands::analyze(
            &source.load()?,
            commands::AnalyzeArgs { result, data, seed, out, skip_sublevel: no_sublevel },
        ),
        Command::Simulate { source, result, x0, steps, disturbance, seed, phase_portrait, out } => commands::simulate(
            &source.load()?,
            commands::SimulateArgs { result, x0, steps, disturbance, seed, phase_portrait, out },
        ),
        Command::Gendata { source, seed, out } => commands::gendata(&source.load()?, commands::GendataArgs { seed, out }),
        Command::PrintConfig { source } => {
            print!("{}", source.load()?.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
