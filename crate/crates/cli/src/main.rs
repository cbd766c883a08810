//! `mfou` command-line tool.

mod commands;
mod manifest;
mod plot;
mod table;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(
    name = "mfou",
    version,
    about = "Mixed fractional OU drift estimation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Build (or load from cache) the kernel tables and export <M>, m', ψ.
    Kernel(Common),
    /// Simulate observation paths and their transforms.
    Simulate(Common),
    /// Estimate θ from path files written by `simulate`.
    Estimate(EstimateArgs),
    /// Export the input design as (t, u, v).
    DesignInput(Common),
    /// Fisher information I₁, I₂ and the asymptotic value.
    Fisher(Common),
    /// Sweep Laplace transforms against their long-horizon targets.
    Laplace(LaplaceArgs),
    /// Monte Carlo study of √T(θ̂ − θ).
    McStudy(Common),
    /// Static SVG plot of a table written by another command.
    Plot(PlotArgs),
    /// Re-run the command recorded in a manifest.
    Rerun(RerunArgs),
}

impl Command {
    fn common_mut(&mut self) -> Option<&mut Common> {
        match self {
            Command::Kernel(c)
            | Command::Simulate(c)
            | Command::DesignInput(c)
            | Command::Fisher(c)
            | Command::McStudy(c) => Some(c),
            Command::Estimate(a) => Some(&mut a.common),
            Command::Laplace(a) => Some(&mut a.common),
            Command::Plot(a) => Some(&mut a.common),
            Command::Rerun(_) => None,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct Common {
    /// Hurst index H ∈ (0, 1), H ≠ 1/2.
    #[arg(long, default_value_t = 0.7)]
    pub hurst: f64,
    /// Drift parameter θ.
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    /// Level of the constant input.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Horizon T.
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    /// Number of grid steps on [0, T].
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    /// Number of replications (simulate: 1, mc-study: 400).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Root seed.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// zero | constant | optimal | file:PATH (a table with a `u` column).
    #[arg(long)]
    pub input: Option<InputArg>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Path tables (columns t and X are used).
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct LaplaceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Transform::Optimal)]
    pub transform: Transform,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: Common,
    /// Table to plot.
    pub file: PathBuf,
    /// Column for the horizontal axis (default: first column).
    #[arg(long)]
    pub x: Option<String>,
    /// Columns to draw (default: all other numeric columns).
    #[arg(long, value_delimiter = ',')]
    pub y: Vec<String>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    /// log E exp(−(μ/T)∫Q²d<M>) under v = √ψ, target −μ𝓘(θ).
    Optimal,
    /// Same under u ≡ α.
    Constant,
    /// −(1/T) log E exp(−μ∫Q²d<M>) under v = √ψ.
    Rate,
    /// log L_T(a) from the Ψ system, target T(θ/2 − √(θ²/4 + a/2)).
    Psi,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum InputArg {
    Zero,
    Constant,
    Optimal,
    File(PathBuf),
}

impl FromStr for InputArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "zero" => Ok(InputArg::Zero),
            "constant" => Ok(InputArg::Constant),
            "optimal" => Ok(InputArg::Optimal),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(InputArg::File(PathBuf::from(p))),
                _ => Err(format!(
                    "expected zero, constant, optimal or file:PATH, got '{s}'"
                )),
            },
        }
    }
}

impl fmt::Display for InputArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputArg::Zero => f.write_str("zero"),
            InputArg::Constant => f.write_str("constant"),
            InputArg::Optimal => f.write_str("optimal"),
            InputArg::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl From<InputArg> for String {
    fn from(a: InputArg) -> String {
        a.to_string()
    }
}

impl TryFrom<String> for InputArg {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
