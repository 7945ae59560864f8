//! `swapgame`: parameter sweeps, Monte Carlo checks and protocol validation.

mod commands;
mod output;
mod params;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use log::error;

use commands::{Ctx, McChoice, ProtocolChoice};
use output::{Format, Normalization, Run};
use params::Params;

#[derive(Parser, Debug)]
#[command(name = "swapgame", version, about = "Success-rate surfaces and protocol checks for atomic swaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Parameter file with one `key = value` per line.
    #[arg(long, global = true, value_name = "FILE")]
    params: Option<PathBuf>,
    /// Override a parameter; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Success rates as raw probabilities or divided by theta_1 * theta_2.
    #[arg(long, global = true, value_enum, default_value_t = Normalization::Conditional)]
    normalization: Normalization,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// HTLC success rate over the (x_a, T, T') grid.
    HtlcSurface,
    /// Quick Swap success rate against the HTLC participation range.
    QuickswapSr,
    /// Enumerate strategy profiles and check correctness, safety and liveness.
    Validate {
        #[arg(long, value_enum)]
        kind: ProtocolChoice,
    },
    /// Simulated success frequencies against the analytic rates.
    Montecarlo {
        #[arg(long, value_enum, default_value_t = McChoice::Both)]
        kind: McChoice,
    },
    /// Generate and check a cyclic Quick Swap lock plan.
    CyclicPlan,
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::HtlcSurface => "htlc-surface".into(),
            Command::QuickswapSr => "quickswap-sr".into(),
            Command::Validate { kind } => format!("validate --kind {}", serde_json::to_value(kind).unwrap().as_str().unwrap()),
            Command::Montecarlo { kind } => {
                format!("montecarlo --kind {}", serde_json::to_value(kind).unwrap().as_str().unwrap())
            }
            Command::CyclicPlan => "cyclic-plan".into(),
        }
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    let mut params = match &cli.params {
        Some(p) => Params::load(p)?,
        None => Params::default(),
    };
    for s in &cli.set {
        params.assign(s)?;
    }
    let cx = Ctx { params: &params, seed: cli.seed, normalization: cli.normalization, format: cli.format };
    let mut run = Run::new(&cli.out, cli.format)?;
    let (ok, summary) = match &cli.command {
        Command::HtlcSurface => commands::htlc_surface(&cx, &mut run)?,
        Command::QuickswapSr => commands::quickswap_sr(&cx, &mut run)?,
        Command::Validate { kind } => commands::validate(&cx, &mut run, *kind)?,
        Command::Montecarlo { kind } => commands::montecarlo(&cx, &mut run, *kind)?,
        Command::CyclicPlan => commands::cyclic_plan(&cx, &mut run)?,
    };
    let manifest = run.finish(&cli.command.name(), cli.seed, cli.normalization, &params, summary)?;
    println!("{}", manifest.display());
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            error!("checks failed; see {}", cli.out.join("manifest.json").display());
            ExitCode::from(1)
        }
        Err(e) => {
            error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
