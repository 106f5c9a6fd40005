//! Starts a coordinator plus `np` rank processes and supervises them.

use std::ffi::OsString;
use std::io::{BufRead, BufReader, Read};
use std::path::PathBuf;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use log::{debug, warn};
use pario::group::{ENV_COORD, ENV_RANK, ENV_SIZE};
use pario::{Coordinator, CoordinatorReport};

/// How long the surviving ranks get to notice a failed peer before they
/// are killed.
const GRACE: Duration = Duration::from_secs(10);

#[derive(Debug, Clone)]
pub struct LaunchSpec {
    pub np: u32,
    pub program: PathBuf,
    pub args: Vec<OsString>,
    /// Coordinator bind address; port 0 picks an ephemeral port.
    pub coord: String,
    pub workdir: Option<PathBuf>,
    /// Extra variables for every rank.
    pub env: Vec<(String, String)>,
    /// Echo rank output to this process's stdout/stderr as it arrives.
    pub echo: bool,
}

impl LaunchSpec {
    pub fn new(np: u32, program: impl Into<PathBuf>) -> Self {
        LaunchSpec {
            np,
            program: program.into(),
            args: Vec::new(),
            coord: "127.0.0.1:0".into(),
            workdir: None,
            env: Vec::new(),
            echo: true,
        }
    }

    pub fn arg(mut self, a: impl Into<OsString>) -> Self {
        self.args.push(a.into());
        self
    }

    pub fn args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<OsString>,
    {
        self.args.extend(args.into_iter().map(Into::into));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Stdout,
    Stderr,
}

#[derive(Debug, Clone)]
pub struct Line {
    pub rank: u32,
    pub stream: Stream,
    pub text: String,
}

#[derive(Debug)]
pub struct Outcome {
    /// Per-rank exit status; `None` for a rank that was killed.
    pub statuses: Vec<Option<ExitStatus>>,
    pub lines: Vec<Line>,
    pub report: CoordinatorReport,
}

impl Outcome {
    pub fn success(&self) -> bool {
        self.statuses
            .iter()
            .all(|s| s.map(|s| s.success()).unwrap_or(false))
    }

    /// 0 iff every rank exited 0; otherwise the first nonzero rank code
    /// (or 1 when a rank died from a signal).
    pub fn exit_code(&self) -> i32 {
        if self.success() {
            return 0;
        }
        self.statuses
            .iter()
            .filter_map(|s| s.and_then(|s| s.code()))
            .find(|&c| c != 0)
            .unwrap_or(1)
    }

    /// Stdout lines of one rank, without prefixes.
    pub fn stdout_of(&self, rank: u32) -> Vec<&str> {
        self.lines
            .iter()
            .filter(|l| l.rank == rank && l.stream == Stream::Stdout)
            .map(|l| l.text.as_str())
            .collect()
    }
}

fn pump(rank: u32, stream: Stream, source: impl Read + Send + 'static, tx: mpsc::Sender<Line>) {
    thread::spawn(move || {
        let reader = BufReader::new(source);
        for text in reader.lines() {
            let Ok(text) = text else { break };
            if tx.send(Line { rank, stream, text }).is_err() {
                break;
            }
        }
    });
}

fn emit(line: &Line) {
    match line.stream {
        Stream::Stdout => println!("[{}] {}", line.rank, line.text),
        Stream::Stderr => eprintln!("[{}] {}", line.rank, line.text),
    }
}

/// Runs the spec to completion.
pub fn run(spec: &LaunchSpec) -> Result<Outcome> {
    if spec.np == 0 {
        bail!("--np must be at least 1");
    }
    let coordinator = Coordinator::bind(spec.coord.as_str(), spec.np)
        .with_context(|| format!("binding coordinator to {}", spec.coord))?;
    let coord = coordinator.spawn().context("starting coordinator")?;
    let endpoint = coord.endpoint();
    debug!("coordinator listening on {endpoint}");

    let (tx, rx) = mpsc::channel();
    let mut children: Vec<Option<Child>> = Vec::new();
    for rank in 0..spec.np {
        let mut cmd = Command::new(&spec.program);
        cmd.args(&spec.args)
            .env(ENV_RANK, rank.to_string())
            .env(ENV_SIZE, spec.np.to_string())
            .env(ENV_COORD, &endpoint)
            .envs(spec.env.iter().map(|(k, v)| (k, v)))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(dir) = &spec.workdir {
            cmd.current_dir(dir);
        }
        match cmd.spawn() {
            Ok(mut child) => {
                pump(rank, Stream::Stdout, child.stdout.take().unwrap(), tx.clone());
                pump(rank, Stream::Stderr, child.stderr.take().unwrap(), tx.clone());
                children.push(Some(child));
            }
            Err(e) => {
                coord.abort("a rank could not be started");
                for c in children.iter_mut().flatten() {
                    let _ = c.kill();
                    let _ = c.wait();
                }
                return Err(e).with_context(|| format!("spawning {}", spec.program.display()));
            }
        }
    }
    drop(tx);

    let mut statuses: Vec<Option<ExitStatus>> = vec![None; spec.np as usize];
    let mut lines = Vec::new();
    let mut failed_at: Option<Instant> = None;
    let mut running = spec.np as usize;
    while running > 0 {
        while let Ok(line) = rx.recv_timeout(Duration::from_millis(5)) {
            if spec.echo {
                emit(&line);
            }
            lines.push(line);
        }
        for (rank, slot) in children.iter_mut().enumerate() {
            let Some(child) = slot else { continue };
            if let Some(status) = child.try_wait().context("waiting for rank")? {
                debug!("rank {rank} exited with {status}");
                if !status.success() && failed_at.is_none() {
                    warn!("rank {rank} failed ({status}); failing the group");
                    coord.abort(&format!("rank {rank} exited with {status}"));
                    failed_at = Some(Instant::now());
                }
                statuses[rank] = Some(status);
                *slot = None;
                running -= 1;
            }
        }
        if failed_at.is_some_and(|t| t.elapsed() > GRACE) {
            for (rank, slot) in children.iter_mut().enumerate() {
                if let Some(child) = slot.take() {
                    warn!("killing rank {rank}");
                    let _ = child_kill(child);
                    running -= 1;
                }
            }
        }
    }
    // the pump threads finish once the pipes close
    for line in rx {
        if spec.echo {
            emit(&line);
        }
        lines.push(line);
    }
    let report = coord.finish(Duration::from_secs(2));
    Ok(Outcome {
        statuses,
        lines,
        report,
    })
}

fn child_kill(mut child: Child) -> std::io::Result<ExitStatus> {
    child.kill()?;
    child.wait()
}

/// Relaunches the current executable as `np` ranks.
pub fn relaunch_self(np: u32, args: Vec<OsString>, echo: bool) -> Result<Outcome> {
    let exe = std::env::current_exe().context("locating own executable")?;
    let mut spec = LaunchSpec::new(np, exe).args(args);
    spec.echo = echo;
    run(&spec)
}

/// True when this process was started by a launcher as one rank.
pub fn is_rank_process() -> bool {
    std::env::var_os(ENV_RANK).is_some()
}
