//! Bandwidth benchmark: timed write and read phases with and without
//! `sync`, plus a per-element read baseline. MB means 10^6 bytes.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use pario::{AccessMode, ElementType, FileHandle, Group, InfoHints, Strategy, Whence};

/// CSV header; the column set is part of the tool's interface.
pub const CSV_COLUMNS: [&str; 6] = ["strategy", "direction", "sync", "bytes", "seconds", "mbps"];

/// Strategy label used for the per-element baseline rows.
pub const ELEMENT_BASELINE: &str = "per-element";

/// Upper bound on bytes each rank reads one element at a time.
pub const BASELINE_CAP: u64 = 1 << 20;

const EXTENT: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Read,
    Write,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Direction::Read => "read",
            Direction::Write => "write",
        })
    }
}

/// Which directions to time. `both` is accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Directions {
    pub read: bool,
    pub write: bool,
}

impl FromStr for Directions {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "read" => Ok(Directions { read: true, write: false }),
            "write" => Ok(Directions { read: false, write: true }),
            "both" => Ok(Directions { read: true, write: true }),
            other => Err(format!("unknown direction {other:?} (read, write or both)")),
        }
    }
}

/// Which sync settings to time. `both` is accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncModes {
    pub off: bool,
    pub on: bool,
}

impl SyncModes {
    fn flags(self) -> impl Iterator<Item = bool> {
        [(false, self.off), (true, self.on)]
            .into_iter()
            .filter(|(_, wanted)| *wanted)
            .map(|(flag, _)| flag)
    }
}

impl FromStr for SyncModes {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "on" => Ok(SyncModes { off: false, on: true }),
            "off" => Ok(SyncModes { off: true, on: false }),
            "both" => Ok(SyncModes { off: true, on: true }),
            other => Err(format!("unknown sync mode {other:?} (on, off or both)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub total_bytes: u64,
    pub block_bytes: u64,
    pub directions: Directions,
    pub sync: SyncModes,
    pub strategy: Strategy,
    pub file: PathBuf,
    pub repetitions: u32,
    pub keep: bool,
}

impl BenchConfig {
    pub fn validate(&self, np: u32) -> Result<()> {
        ensure!(self.repetitions > 0, "repetitions must be at least 1");
        ensure!(self.block_bytes > 0, "block size must be positive");
        ensure!(self.total_bytes > 0, "total size must be positive");
        ensure!(
            self.block_bytes.is_multiple_of(EXTENT),
            "block size must be a multiple of {EXTENT} bytes"
        );
        ensure!(np > 0, "process count must be at least 1");
        let stripe = self.block_bytes * np as u64;
        ensure!(
            self.total_bytes.is_multiple_of(stripe),
            "total size {} is not a multiple of block size x processes ({stripe})",
            self.total_bytes
        );
        ensure!(
            self.directions.read || self.directions.write,
            "nothing to measure: no direction selected"
        );
        ensure!(
            self.sync.on || self.sync.off,
            "nothing to measure: no sync mode selected"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub strategy: String,
    pub direction: Direction,
    pub sync: bool,
    pub bytes: u64,
    pub seconds: f64,
    pub mbps: f64,
}

impl Sample {
    fn new(strategy: String, direction: Direction, sync: bool, bytes: u64, seconds: f64) -> Self {
        let mbps = if seconds > 0.0 {
            bytes as f64 / seconds / 1e6
        } else {
            f64::INFINITY
        };
        Sample {
            strategy,
            direction,
            sync,
            bytes,
            seconds,
            mbps,
        }
    }
}

/// Slowest rank's elapsed seconds for a barrier-bracketed section.
fn timed(group: &Group, work: impl FnOnce() -> Result<()>) -> Result<f64> {
    group.barrier()?;
    let start = Instant::now();
    let outcome = work();
    let mine = start.elapsed().as_nanos() as i64;
    // a failed rank still contributes so the others are not left waiting
    let all = group.all_gather(if outcome.is_ok() { mine } else { -1 })?;
    outcome?;
    if all.iter().any(|&t| t < 0) {
        bail!("another rank failed during a timed phase");
    }
    Ok(*all.iter().max().unwrap() as f64 / 1e9)
}

fn pattern(rank: u32, block_elems: usize) -> Vec<i32> {
    (0..block_elems)
        .map(|i| (i as i32).wrapping_mul(2_654_435_761u32 as i32) ^ rank as i32)
        .collect()
}

struct Layout {
    share: u64,
    block_elems: usize,
    blocks: u64,
    base: i64,
}

impl Layout {
    fn new(cfg: &BenchConfig, group: &Group) -> Self {
        let share = cfg.total_bytes / group.size() as u64;
        let block_elems = (cfg.block_bytes / EXTENT) as usize;
        Layout {
            share,
            block_elems,
            blocks: share / cfg.block_bytes,
            base: (group.rank() as u64 * share / EXTENT) as i64,
        }
    }

    fn offset(&self, block: u64) -> i64 {
        self.base + (block * self.block_elems as u64) as i64
    }
}

fn write_share(fh: &mut FileHandle, l: &Layout, data: &[i32], sync: bool) -> Result<()> {
    for b in 0..l.blocks {
        fh.write_at(l.offset(b), data, 0, data.len())?;
    }
    if sync {
        fh.sync()?;
    }
    Ok(())
}

fn read_share(fh: &mut FileHandle, l: &Layout, buf: &mut [i32], sync: bool) -> Result<()> {
    if sync {
        fh.sync()?;
    }
    for b in 0..l.blocks {
        let n = buf.len();
        let st = fh.read_at(l.offset(b), buf, 0, n)?;
        ensure!(st.count == n, "short read in block {b}: {} of {n}", st.count);
    }
    Ok(())
}

/// Reads up to `BASELINE_CAP` bytes of this rank's share one element per
/// call. Returns the bytes each rank read.
fn read_per_element(fh: &mut FileHandle, l: &Layout) -> Result<u64> {
    let bytes = l.share.min(BASELINE_CAP);
    let mut one = [0i32; 1];
    for i in 0..(bytes / EXTENT) as i64 {
        fh.read_at(l.base + i, &mut one, 0, 1)?;
    }
    Ok(bytes)
}

fn rep_path(cfg: &BenchConfig, rep: u32) -> PathBuf {
    if cfg.repetitions == 1 {
        return cfg.file.clone();
    }
    let mut name = cfg.file.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".{rep}"));
    cfg.file.with_file_name(name)
}

/// Runs the benchmark on this rank. Every rank returns the same samples.
pub fn run_rank(group: &Group, cfg: &BenchConfig) -> Result<Vec<Sample>> {
    cfg.validate(group.size())?;
    let l = Layout::new(cfg, group);
    let data = pattern(group.rank(), l.block_elems);
    let mut buf = vec![0i32; l.block_elems];
    let label = cfg.strategy.to_string();
    let mut samples = Vec::new();
    let info = InfoHints::new();

    for rep in 0..cfg.repetitions {
        let path = rep_path(cfg, rep);
        let amode = AccessMode::RDWR | AccessMode::CREATE;
        let mut fh = FileHandle::open_with(group, &path, amode, &info, cfg.strategy)
            .with_context(|| format!("opening {}", path.display()))?;
        fh.set_view(0, ElementType::Int32, ElementType::Int32, "native", &info)?;

        let mut written = false;
        for sync in cfg.sync.flags() {
            if cfg.directions.write {
                // both write phases start from an empty file
                fh.set_size(0)?;
                let secs = timed(group, || write_share(&mut fh, &l, &data, sync))?;
                samples.push(Sample::new(label.clone(), Direction::Write, sync, cfg.total_bytes, secs));
                written = true;
            } else if !written {
                write_share(&mut fh, &l, &data, true)?;
                group.barrier()?;
                written = true;
            }
            if cfg.directions.read {
                let secs = timed(group, || read_share(&mut fh, &l, &mut buf, sync))?;
                if buf != data {
                    bail!("rank {}: read-back differs from written data", group.rank());
                }
                samples.push(Sample::new(label.clone(), Direction::Read, sync, cfg.total_bytes, secs));
            }
        }
        if cfg.directions.read {
            let mut per_rank = 0;
            let secs = timed(group, || {
                per_rank = read_per_element(&mut fh, &l)?;
                Ok(())
            })?;
            let bytes = per_rank * group.size() as u64;
            samples.push(Sample::new(ELEMENT_BASELINE.into(), Direction::Read, false, bytes, secs));
        }
        fh.close()?;
        if !cfg.keep {
            if group.rank() == 0 {
                FileHandle::delete(&path, &info)?;
            }
            group.barrier()?;
        }
    }
    Ok(samples)
}

/// 1 KiB collective round trip: each rank writes its slice with
/// `write_all`, then every rank reads the whole buffer back.
pub fn smoke(group: &Group, path: &Path) -> Result<()> {
    const SIZE: usize = 1024;
    let np = group.size() as usize;
    let expected: Vec<u8> = (0..SIZE).map(|i| (i * 31 % 255) as u8).collect();
    let share = SIZE.div_ceil(np);
    let start = (group.rank() as usize * share).min(SIZE);
    let end = (start + share).min(SIZE);

    let info = InfoHints::new();
    let amode = AccessMode::RDWR | AccessMode::CREATE | AccessMode::DELETE_ON_CLOSE;
    let mut fh = FileHandle::open(group, path, amode, &info)?;
    fh.seek(start as i64, Whence::Set)?;
    fh.write_all(&expected, start, end - start)?;
    fh.sync()?;
    group.barrier()?;
    fh.sync()?;
    fh.seek(0, Whence::Set)?;
    let mut got = vec![0u8; SIZE];
    let st = fh.read_all(&mut got, 0, SIZE)?;
    fh.close()?;
    ensure!(st.count == SIZE, "read {} of {SIZE} bytes", st.count);
    if let Some(i) = got.iter().zip(&expected).position(|(a, b)| a != b) {
        bail!(
            "rank {}: byte {i} is {:#04x}, expected {:#04x}",
            group.rank(),
            got[i],
            expected[i]
        );
    }
    Ok(())
}

pub fn write_csv<W: Write>(out: W, samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for s in samples {
        w.write_record([
            s.strategy.clone(),
            s.direction.to_string(),
            if s.sync { "on" } else { "off" }.to_string(),
            s.bytes.to_string(),
            format!("{:.6}", s.seconds),
            format!("{:.3}", s.mbps),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<Sample>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    ensure!(
        headers.iter().eq(CSV_COLUMNS),
        "unexpected CSV columns: {headers:?}"
    );
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let direction = match &rec[1] {
            "read" => Direction::Read,
            "write" => Direction::Write,
            other => bail!("bad direction {other:?}"),
        };
        out.push(Sample {
            strategy: rec[0].to_string(),
            direction,
            sync: &rec[2] == "on",
            bytes: rec[3].parse()?,
            seconds: rec[4].parse()?,
            mbps: rec[5].parse()?,
        });
    }
    Ok(out)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Human-readable summary, one row per phase.
pub fn table(samples: &[Sample]) -> String {
    let mut phases: Vec<(String, Direction, bool)> = Vec::new();
    for s in samples {
        let key = (s.strategy.clone(), s.direction, s.sync);
        if !phases.contains(&key) {
            phases.push(key);
        }
    }
    let mut out = format!(
        "{:<12} {:<6} {:<5} {:>5} {:>12} {:>12} {:>12}\n",
        "strategy", "dir", "sync", "reps", "median MB/s", "min MB/s", "max MB/s"
    );
    for (strategy, dir, sync) in phases {
        let mut v: Vec<f64> = samples
            .iter()
            .filter(|s| s.strategy == strategy && s.direction == dir && s.sync == sync)
            .map(|s| s.mbps)
            .collect();
        let reps = v.len();
        let med = median(&mut v);
        out.push_str(&format!(
            "{:<12} {:<6} {:<5} {:>5} {:>12.1} {:>12.1} {:>12.1}\n",
            strategy,
            dir,
            if sync { "on" } else { "off" },
            reps,
            med,
            v[0],
            v[reps - 1]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> BenchConfig {
        BenchConfig {
            total_bytes: 1 << 20,
            block_bytes: 1 << 16,
            directions: "both".parse().unwrap(),
            sync: "both".parse().unwrap(),
            strategy: Strategy::Positional,
            file: "bench.dat".into(),
            repetitions: 3,
            keep: false,
        }
    }

    #[test]
    fn validation() {
        assert!(cfg().validate(4).is_ok());
        let mut c = cfg();
        c.repetitions = 0;
        assert!(c.validate(1).is_err());
        let mut c = cfg();
        c.total_bytes = 3 << 16;
        assert!(c.validate(2).is_err());
        assert!(c.validate(3).is_ok());
        let mut c = cfg();
        c.block_bytes = 6;
        c.total_bytes = 12;
        assert!(c.validate(2).is_err());
    }

    #[test]
    fn direction_and_sync_parsing() {
        assert_eq!("write".parse::<Directions>().unwrap(), Directions { read: false, write: true });
        assert!("sideways".parse::<Directions>().is_err());
        assert_eq!(SyncModes::from_str("on").unwrap().flags().collect::<Vec<_>>(), [true]);
        assert_eq!(SyncModes::from_str("both").unwrap().flags().collect::<Vec<_>>(), [false, true]);
    }

    #[test]
    fn megabytes_are_decimal() {
        let s = Sample::new("positional".into(), Direction::Write, false, 2_000_000, 0.5);
        assert_eq!(s.mbps, 4.0);
    }

    #[test]
    fn csv_round_trip() {
        let samples = vec![
            Sample::new("positional".into(), Direction::Write, true, 1 << 20, 0.25),
            Sample::new(ELEMENT_BASELINE.into(), Direction::Read, false, 4096, 0.001),
        ];
        let mut out = Vec::new();
        write_csv(&mut out, &samples).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert!(text.starts_with("strategy,direction,sync,bytes,seconds,mbps\n"));
        let back = read_csv(&out[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].bytes, 1 << 20);
        assert!(back[0].sync);
        assert_eq!(back[1].strategy, ELEMENT_BASELINE);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn repetition_paths() {
        let mut c = cfg();
        assert_eq!(rep_path(&c, 2), PathBuf::from("bench.dat.2"));
        c.repetitions = 1;
        assert_eq!(rep_path(&c, 0), PathBuf::from("bench.dat"));
    }
}
