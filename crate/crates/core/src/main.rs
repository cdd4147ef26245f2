use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ehlink::cli::{csv::fmt_text, run_to_output, Command, Method, RunSpec, SweepAxis};

#[derive(Parser)]
#[command(name = "ehlink", version, about = "Outage analysis for energy-harvesting fading links")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML configuration file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Write the CSV here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Independent simulation replicas, seeded seed, seed + 1, ...
    #[arg(long, global = true, default_value_t = 1)]
    replicas: u32,

    /// Source policy: disjoint, joint or linear.
    #[arg(long, global = true)]
    policy: Option<String>,

    /// Receiver mode: always, detect, detect-process or csi.
    #[arg(long, global = true)]
    receiver: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Closed-form probabilities, thresholds and the outage lower bound.
    Analyze,
    /// Outage and mean transmissions from the finite-battery Markov chain.
    Fsmc,
    /// Monte Carlo estimates with 95% confidence half-widths.
    Simulate,
    /// Threshold search over the energy grid.
    Search,
    /// One row per axis point and method.
    Sweep {
        /// key:start:stop:step, e.g. b_max:500:3000:500
        #[arg(long)]
        sweep: String,
        /// Comma-separated subset of bound, fsmc, sim.
        #[arg(long, default_value = "fsmc,sim")]
        methods: String,
    },
}

fn build(cli: Cli) -> ehlink::Result<RunSpec> {
    let (command, sweep, methods) = match cli.command {
        Cmd::Analyze => (Command::Analyze, None, None),
        Cmd::Fsmc => (Command::Fsmc, None, None),
        Cmd::Simulate => (Command::Simulate, None, None),
        Cmd::Search => (Command::Search, None, None),
        Cmd::Sweep { sweep, methods } => (Command::Sweep, Some(sweep.parse::<SweepAxis>()?), Some(methods)),
    };
    let mut spec = RunSpec::new(command);
    spec.config_path = cli.config;
    spec.output_path = cli.out;
    spec.seed = cli.seed;
    spec.replicas = cli.replicas;
    spec.policy = cli.policy;
    spec.receiver = cli.receiver;
    spec.sweep = sweep;
    if let Some(m) = methods {
        spec.methods = m.split(',').map(|s| s.trim().parse::<Method>()).collect::<ehlink::Result<_>>()?;
    }
    Ok(spec)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match build(cli).and_then(|spec| run_to_output(&spec)) {
        Ok(Some(csv)) => {
            let mut out = std::io::stdout().lock();
            if out.write_all(csv.as_bytes()).is_err() {
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error,{},{}", e.kind(), fmt_text(&e.to_string()));
            ExitCode::from(1)
        }
    }
}
