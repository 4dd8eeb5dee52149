use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Parser};

use stackcfg::cli::{run_stdio, Input, RunConfig, EXIT_ERROR};
use stackcfg::equations::SolverMode;
use stackcfg::oracle::Bounds;

/// Recover a stack-sensitive control-flow graph from EVM bytecode.
#[derive(Debug, Parser)]
#[command(name = "stackcfg", version)]
struct Args {
    /// Bytecode as hex, with or without a 0x prefix.
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    hex: Option<String>,
    /// File holding the bytecode as hex text.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Print the basic blocks.
    #[arg(long)]
    blocks: bool,
    /// Write the CFG as Graphviz DOT (`-` for stdout).
    #[arg(long, value_name = "PATH")]
    dot: Option<PathBuf>,
    /// Write the CFG as JSON (`-` for stdout).
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
    /// Check the analysis against exhaustive concrete exploration.
    #[arg(long)]
    check: bool,
    #[arg(long, default_value_t = 100_000, value_name = "N")]
    max_steps: usize,
    #[arg(long, default_value_t = 100_000, value_name = "N")]
    max_states: usize,
    /// worklist, lifo or naive.
    #[arg(long, default_value = "worklist")]
    solver: SolverMode,
    /// More logging; repeat for more.
    #[arg(short, long, action = ArgAction::Count)]
    verbose: u8,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_ERROR as u8),
            };
        }
    };

    let level = match args.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).init();

    let input = match (args.hex, args.file) {
        (Some(h), _) => Input::Hex(h),
        (None, Some(f)) => Input::File(f),
        (None, None) => unreachable!("clap requires one input"),
    };
    let config = RunConfig {
        input,
        blocks: args.blocks,
        dot: args.dot,
        json: args.json,
        check: args.check,
        bounds: Bounds {
            max_steps: args.max_steps,
            max_states: args.max_states,
        },
        solver: args.solver,
        verbosity: args.verbose,
    };
    ExitCode::from(run_stdio(&config) as u8)
}
