use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "promise", version, about = "Delivery promise-date models on a simulated supply chain")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded delivery history.
    Simulate(SimulateArgs),
    /// Train one leg model on everything before the held-out week.
    Train(TrainArgs),
    /// Tune breach target weights and fit the shipping-leg corrector.
    TuneBreach(TuneArgs),
    /// Quote one order, or every order of a JSON-lines file.
    Quote(QuoteArgs),
    /// Serve quotes over HTTP.
    Serve(ServeArgs),
    /// Score a model set on the held-out week.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in scenario (`default`, `hrd`) or a TOML/JSON scenario file.
    #[arg(long, default_value = "default")]
    pub scenario: String,
    /// Overrides the scenario's number of days.
    #[arg(long)]
    pub days: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML run config supplying defaults for the flags above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = ["vendor", "warehouse", "shipping"])]
    pub leg: String,
    #[arg(long, value_parser = ["gbdt", "stsf", "baseline"])]
    pub model: String,
    /// `mse`, `asymmetric:ALPHA` or `quantile:TAU`.
    #[arg(long)]
    pub loss: Option<String>,
    /// `deliveries.csv` of a simulate run; its sibling files are read too.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Feature recipe TOML; defaults to the leg's built-in recipe.
    #[arg(long)]
    pub recipe: Option<PathBuf>,
    /// Directory written by `tune-breach`, attached to a shipping model.
    #[arg(long)]
    pub corrector: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub history: PathBuf,
    /// Largest tolerated breach rate per delivery date, in (0, 1).
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QuoteArgs {
    /// Inline order JSON, or a file with one order JSON per line.
    #[arg(long)]
    pub order: String,
    #[arg(long)]
    pub models: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub models: PathBuf,
    /// 0 picks a free port; the bound address is printed on startup.
    #[arg(long)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Early window in days: 1 for BAU accuracy, 2 for sale periods.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=2))]
    pub window: u32,
    /// Directory for report.csv, report.md and report.json.
    #[arg(long)]
    pub out: PathBuf,
}
