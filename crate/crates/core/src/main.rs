use std::path::PathBuf;

use clap::{Parser, Subcommand};

use mircage::cli::{self, OutputFormat, RunConfig};
use mircage::instrument::Mode;

#[derive(Parser)]
#[command(
    name = "mircage",
    about = "Sandbox MiniMIR programs: analyze cross-boundary data, instrument boundaries, run under simulated isolation"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a program against a sandbox spec.
    Analyze {
        program: PathBuf,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: OutputFormat,
        /// Override the container-kind list from the spec.
        #[arg(long, value_delimiter = ',')]
        containers: Option<Vec<String>>,
        /// Also print the call graph ("edges" or "dot").
        #[arg(long)]
        emit_graph: Option<String>,
    },
    /// Rewrite a program with boundary wrappers and allocation redirection.
    Instrument {
        program: PathBuf,
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Data-movement mode: copy | share.
        #[arg(long)]
        mode: Mode,
        #[arg(long, value_delimiter = ',')]
        containers: Option<Vec<String>>,
        /// Output base path; writes <base>.mmir and <base>.sidecar.json.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Execute a program (instrumented when its sidecar is present).
    Run {
        program: PathBuf,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// Assert the sidecar's mode.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        step_budget: Option<u64>,
        #[arg(long, default_value = "text")]
        format: OutputFormat,
        /// Print the event trace.
        #[arg(long)]
        trace: bool,
    },
    /// Compare the dynamic oracle with the static analysis over many seeds.
    Check {
        program: PathBuf,
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Seeds: `N`, `a..b`, or a comma list. Default: exhaustive when
        /// the program has at most 6 branches, else 0..64.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, value_delimiter = ',')]
        containers: Option<Vec<String>>,
        #[arg(long)]
        step_budget: Option<u64>,
        #[arg(long, default_value = "text")]
        format: OutputFormat,
    },
}

fn main() {
    let args = Args::parse();
    let result = match args.command {
        Command::Analyze { program, spec, format, containers, emit_graph } => {
            cli::cmd_analyze(&RunConfig {
                program,
                spec,
                format,
                containers,
                emit_graph,
                ..Default::default()
            })
        }
        Command::Instrument { program, spec, mode, containers, output } => {
            cli::cmd_instrument(&RunConfig {
                program,
                spec,
                mode: Some(mode),
                containers,
                output,
                ..Default::default()
            })
        }
        Command::Run { program, sidecar, mode, seed, step_budget, format, trace } => {
            cli::cmd_run(&RunConfig {
                program,
                sidecar,
                mode,
                seed,
                step_budget,
                format,
                trace,
                ..Default::default()
            })
        }
        Command::Check { program, spec, seeds, containers, step_budget, format } => {
            cli::cmd_check(&RunConfig {
                program,
                spec,
                seeds,
                containers,
                step_budget,
                format,
                ..Default::default()
            })
        }
    };
    print!("{}", result.output);
    std::process::exit(result.code);
}
