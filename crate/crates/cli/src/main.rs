mod commands;
mod report;

use std::fmt;
use std::process::ExitCode;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use supermarket::Error;

use crate::report::ResultsDocument;

/// Supermarket model with phase-type service: closed-form fixed points,
/// mean-field dynamics and discrete-event simulation.
#[derive(Parser, Debug)]
#[command(name = "supermarket", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Emit CSV (one block per table, full precision).
    #[arg(long, global = true, conflicts_with = "json")]
    csv: bool,

    /// Emit the full results document as JSON.
    #[arg(long, global = true)]
    json: bool,

    /// Leave the wall-clock timestamp out of the results document.
    #[arg(long, global = true)]
    no_timestamp: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a canonical order-2 PH distribution to three raw moments.
    Fit(FitArgs),
    /// Tabulate the closed-form fixed point pi_1, pi_2, ...
    FixedPoint(FixedPointArgs),
    /// Expected sojourn time at the fixed point.
    Sojourn(ModelArgs),
    /// Integrate the mean-field equations.
    Ode(OdeArgs),
    /// Simulate a finite system of n servers.
    Simulate(SimulateArgs),
    /// Closed form, mean-field and simulation side by side, with a matched-mean exponential baseline.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub m1: f64,
    #[arg(long)]
    pub m2: f64,
    #[arg(long)]
    pub m3: f64,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// `exp:mu`, `erlang:m,eta`, `hyperexp:w1,..;r1,..`, `coxian2:eta,xi1,xi2`, or a JSON file.
    #[arg(long)]
    pub dist: String,
    /// Arrival rate per server.
    #[arg(long)]
    pub lambda: f64,
    /// Servers probed per arrival.
    #[arg(long = "d")]
    pub d: usize,
}

#[derive(Args, Debug)]
pub struct FixedPointArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of levels; by default levels are listed until pi_k e < 1e-16.
    #[arg(long)]
    pub kmax: Option<usize>,
}

#[derive(Debug, Clone)]
pub enum Init {
    Empty,
    FixedPoint,
    File(String),
}

impl FromStr for Init {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "empty" => Init::Empty,
            "fixed-point" => Init::FixedPoint,
            path => Init::File(path.into()),
        })
    }
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Init::Empty => f.write_str("empty"),
            Init::FixedPoint => f.write_str("fixed-point"),
            Init::File(path) => f.write_str(path),
        }
    }
}

#[derive(Args, Debug)]
pub struct OdeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Integration horizon; defaults to 100 / lambda.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Truncation depth; defaults to the first K with pi_K e < 1e-12.
    #[arg(long)]
    pub kmax: Option<usize>,
    /// `empty`, `fixed-point`, or a JSON file holding `{"levels": [[..], ..]}`.
    #[arg(long, default_value = "empty")]
    pub init: Init,
}

#[derive(Args, Debug)]
pub struct SimArgs {
    /// Number of servers.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Simulated time per replication; defaults to 1e5 / lambda.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Discarded prefix; defaults to 10% of the horizon.
    #[arg(long)]
    pub warmup: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub dist: String,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long = "d")]
    pub d: usize,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Skip the simulation columns.
    #[arg(long)]
    pub no_sim: bool,
    #[command(flatten)]
    pub sim: SimArgs,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Unstable { .. } => 3,
        Error::Numerical(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let echo: Vec<String> = std::env::args().skip(1).collect();
    let result = match &cli.command {
        Command::Fit(a) => commands::fit_cmd(echo, a),
        Command::FixedPoint(a) => commands::fixed_point_cmd(echo, a),
        Command::Sojourn(a) => commands::sojourn_cmd(echo, a),
        Command::Ode(a) => commands::ode_cmd(echo, a),
        Command::Simulate(a) => commands::simulate_cmd(echo, a),
        Command::Compare(a) => commands::compare_cmd(echo, a),
    };
    match result {
        Ok(doc) => {
            print!("{}", render(doc, &cli));
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn render(mut doc: ResultsDocument, cli: &Cli) -> String {
    if !cli.no_timestamp {
        doc.provenance.timestamp = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs());
    }
    if cli.json {
        doc.to_json() + "\n"
    } else if cli.csv {
        doc.to_csv()
    } else {
        doc.to_human()
    }
}
