use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cohmm_cli::{commands, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "cohmm", version, about = "Copula quantile and expectile hidden Markov regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Descriptive statistics of the response series
    Stats(Overrides),
    /// Fit the model at each requested tau level
    Fit(Overrides),
    /// Information criteria over a grid of state counts and copulas
    Select(Overrides),
    /// Posterior state probabilities under a saved fit
    Decode(Overrides),
    /// Parametric bootstrap standard errors for a saved fit
    Bootstrap(Overrides),
    /// Monte Carlo study on the built-in two-state design
    Simulate(Overrides),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (ov, run): (&Overrides, fn(&RunConfig) -> anyhow::Result<()>) = match &cli.command {
        Command::Stats(o) => (o, commands::stats),
        Command::Fit(o) => (o, commands::fit_models),
        Command::Select(o) => (o, commands::select),
        Command::Decode(o) => (o, commands::decode),
        Command::Bootstrap(o) => (o, commands::bootstrap),
        Command::Simulate(o) => (o, commands::simulate),
    };
    match RunConfig::resolve(ov).and_then(|cfg| run(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
