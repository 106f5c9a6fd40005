use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use pario::Group;
use pario_cli::conformance::{self, Suite};
use pario_cli::launch;

/// Run a conformance suite under the launcher.
#[derive(Parser, Debug)]
#[command(name = "pario-conformance", version)]
struct Args {
    /// Number of rank processes (at least 2).
    #[arg(long, short = 'n', default_value_t = 2)]
    np: u32,

    /// coll, async, atomicity, misc or all.
    #[arg(long, default_value = "all")]
    suite: String,

    /// Directory for the test files; a temporary one by default.
    #[arg(long)]
    dir: Option<PathBuf>,
}

fn suites(name: &str) -> Result<Vec<Suite>, String> {
    if name.eq_ignore_ascii_case("all") {
        Ok(Suite::ALL.to_vec())
    } else {
        name.parse().map(|s| vec![s])
    }
}

fn rank_main(args: &Args, suites: &[Suite]) -> Result<()> {
    let group = Group::from_env().context("joining the group")?;
    let dir = args.dir.clone().context("--dir is required in rank mode")?;
    for &suite in suites {
        conformance::run_suite(&group, suite, &dir).with_context(|| format!("suite {suite}"))?;
        if group.rank() == 0 {
            println!("PASS {suite}");
        }
    }
    group.finalize()?;
    Ok(())
}

fn launcher_main(args: &Args, suites: &[Suite]) -> Result<bool> {
    anyhow::ensure!(args.np >= 2, "conformance suites need --np 2 or more");
    let scratch;
    let dir = match &args.dir {
        Some(d) => d.clone(),
        None => {
            scratch = tempfile::tempdir().context("creating scratch directory")?;
            scratch.path().to_path_buf()
        }
    };
    let names: Vec<String> = suites.iter().map(|s| s.to_string()).collect();
    let forwarded: Vec<OsString> = vec![
        "--np".into(),
        args.np.to_string().into(),
        "--suite".into(),
        args.suite.clone().into(),
        "--dir".into(),
        dir.into_os_string(),
    ];
    let outcome = launch::relaunch_self(args.np, forwarded, true)?;
    let passed: Vec<&str> = outcome
        .stdout_of(0)
        .into_iter()
        .filter_map(|l| l.strip_prefix("PASS "))
        .collect();
    for name in &names {
        let ok = outcome.success() && passed.contains(&name.as_str());
        println!("suite {name} np={}: {}", args.np, if ok { "PASS" } else { "FAIL" });
    }
    Ok(outcome.success() && names.iter().all(|n| passed.contains(&n.as_str())))
}

fn main() -> ExitCode {
    pario_cli::init_logging();
    let args = Args::parse();
    let suites = match suites(&args.suite) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("pario-conformance: {e}");
            return ExitCode::from(2);
        }
    };
    if launch::is_rank_process() {
        return match rank_main(&args, &suites) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("FAIL {e:#}");
                ExitCode::FAILURE
            }
        };
    }
    match launcher_main(&args, &suites) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("pario-conformance: {e:#}");
            ExitCode::from(2)
        }
    }
}
