use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pario_cli::launch::{self, LaunchSpec};

/// Start a coordinator and N copies of a program as one process group.
#[derive(Parser, Debug)]
#[command(name = "pario-run", version)]
struct Args {
    /// Number of rank processes.
    #[arg(long, short = 'n', value_parser = clap::value_parser!(u32).range(1..))]
    np: u32,

    /// Coordinator bind address.
    #[arg(long, default_value = "127.0.0.1:0")]
    coord: String,

    /// Working directory for the ranks.
    #[arg(long)]
    cwd: Option<PathBuf>,

    /// Program to run, followed by its arguments.
    #[arg(last = true, required = true, num_args = 1..)]
    command: Vec<OsString>,
}

fn main() -> ExitCode {
    pario_cli::init_logging();
    let args = Args::parse();
    let mut command = args.command.into_iter();
    let program = command.next().expect("clap enforces a program");
    let mut spec = LaunchSpec::new(args.np, program).args(command);
    spec.coord = args.coord;
    spec.workdir = args.cwd;

    match launch::run(&spec) {
        Ok(outcome) => {
            for (rank, status) in outcome.statuses.iter().enumerate() {
                match status {
                    Some(s) if s.success() => {}
                    Some(s) => eprintln!("pario-run: rank {rank} exited with {s}"),
                    None => eprintln!("pario-run: rank {rank} was killed"),
                }
            }
            ExitCode::from(outcome.exit_code().clamp(0, 255) as u8)
        }
        Err(e) => {
            eprintln!("pario-run: {e:#}");
            ExitCode::from(127)
        }
    }
}
