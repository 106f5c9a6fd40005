use std::fs::File;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use pario::{Group, Strategy};
use pario_cli::launch::{self, Stream};
use pario_cli::perf::{self, BenchConfig, Directions, SyncModes};

/// Measure parallel read/write bandwidth in MB/s (10^6 bytes).
#[derive(Parser, Debug)]
#[command(name = "pario-perf", version)]
struct Args {
    /// Number of rank processes.
    #[arg(long, short = 'n', default_value_t = 1)]
    np: u32,

    /// Total bytes per phase; accepts K, M and G suffixes (powers of 1024).
    #[arg(long, default_value = "64M", value_parser = parse_size)]
    size: u64,

    /// Bytes per write/read call; accepts K, M and G suffixes.
    #[arg(long, default_value = "1M", value_parser = parse_size)]
    block: u64,

    /// read, write or both.
    #[arg(long = "dir", default_value = "both")]
    direction: Directions,

    /// on, off or both.
    #[arg(long, default_value = "both")]
    sync: SyncModes,

    /// positional or mapped.
    #[arg(long, default_value = "positional")]
    strategy: Strategy,

    /// Benchmark file; repetitions append `.N`.
    #[arg(long, default_value = "pario-bench.dat")]
    file: PathBuf,

    /// Repetitions of every phase.
    #[arg(long, default_value_t = 3)]
    reps: u32,

    /// Also write the samples as CSV to this path.
    #[arg(long)]
    csv: Option<PathBuf>,

    /// Keep the benchmark files.
    #[arg(long)]
    keep: bool,

    /// Only run the 1 KiB collective round trip.
    #[arg(long)]
    smoke: bool,
}

fn parse_size(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (digits, suffix) = s.split_at(split);
    let n: u64 = digits.parse().map_err(|_| format!("bad size {s:?}"))?;
    let unit: u64 = match suffix.to_ascii_uppercase().as_str() {
        "" | "B" => 1,
        "K" | "KB" | "KIB" => 1 << 10,
        "M" | "MB" | "MIB" => 1 << 20,
        "G" | "GB" | "GIB" => 1 << 30,
        other => return Err(format!("unknown size suffix {other:?}")),
    };
    n.checked_mul(unit).ok_or_else(|| format!("size {s:?} overflows"))
}

impl Args {
    fn config(&self) -> BenchConfig {
        BenchConfig {
            total_bytes: self.size,
            block_bytes: self.block,
            directions: self.direction,
            sync: self.sync,
            strategy: self.strategy,
            file: self.file.clone(),
            repetitions: self.reps,
            keep: self.keep,
        }
    }
}

fn rank_main(args: &Args) -> Result<()> {
    let group = Group::from_env().context("joining the group")?;
    if args.smoke {
        perf::smoke(&group, &args.file)?;
        if group.rank() == 0 {
            println!("smoke: 1 KiB collective round trip OK on {} ranks", group.size());
        }
        group.finalize()?;
        return Ok(());
    }
    let samples = perf::run_rank(&group, &args.config())?;
    if group.rank() == 0 {
        print!("{}", perf::table(&samples));
        match &args.csv {
            Some(path) => {
                let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
                perf::write_csv(f, &samples)?;
            }
            None => {
                println!();
                perf::write_csv(io::stdout().lock(), &samples)?;
            }
        }
    }
    group.finalize()?;
    Ok(())
}

fn main() -> ExitCode {
    pario_cli::init_logging();
    let args = Args::parse();
    if launch::is_rank_process() {
        return match rank_main(&args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("pario-perf: {e:#}");
                ExitCode::FAILURE
            }
        };
    }
    if let Err(e) = args.config().validate(args.np) {
        eprintln!("pario-perf: {e:#}");
        return ExitCode::from(2);
    }
    let forwarded = std::env::args_os().skip(1).collect();
    match launch::relaunch_self(args.np, forwarded, false) {
        Ok(outcome) => {
            // rank 0 carries the report; anything else is diagnostics
            for line in &outcome.lines {
                match (line.rank, line.stream) {
                    (0, Stream::Stdout) => println!("{}", line.text),
                    _ => eprintln!("[{}] {}", line.rank, line.text),
                }
            }
            ExitCode::from(outcome.exit_code().clamp(0, 255) as u8)
        }
        Err(e) => {
            eprintln!("pario-perf: {e:#}");
            ExitCode::from(2)
        }
    }
}
