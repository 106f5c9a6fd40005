//! Conformance suites. Each performs a 1 KiB write-then-read cycle through
//! one family of routines and checks the data plus suite-specific rules.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, ensure, Result};
use pario::{AccessMode, ElementType, FileHandle, Group, InfoHints, Whence};

pub const CYCLE_BYTES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Coll,
    Async,
    Atomicity,
    Misc,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Coll, Suite::Async, Suite::Atomicity, Suite::Misc];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Suite::Coll => "coll",
            Suite::Async => "async",
            Suite::Atomicity => "atomicity",
            Suite::Misc => "misc",
        })
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown suite {s:?} (coll, async, atomicity or misc)"))
    }
}

/// The bytes every suite expects to find in the shared 1 KiB file.
pub fn oracle() -> Vec<u8> {
    (0..CYCLE_BYTES).map(|i| (i * 7 + 3) as u8).collect()
}

/// Fails with the first differing byte and the number of differences.
pub fn compare(rank: u32, what: &str, expected: &[u8], got: &[u8]) -> Result<()> {
    ensure!(
        expected.len() == got.len(),
        "rank {rank}: {what}: length {} != expected {}",
        got.len(),
        expected.len()
    );
    let diffs: Vec<usize> = (0..got.len()).filter(|&i| got[i] != expected[i]).collect();
    if let Some(&first) = diffs.first() {
        bail!(
            "rank {rank}: {what}: {} byte(s) differ, first at offset {first}: got {:#04x}, expected {:#04x}",
            diffs.len(),
            got[first],
            expected[first]
        );
    }
    Ok(())
}

/// This rank's half-open byte slice of the 1 KiB cycle.
fn slice_of(group: &Group) -> (usize, usize) {
    let share = CYCLE_BYTES.div_ceil(group.size() as usize);
    let start = (group.rank() as usize * share).min(CYCLE_BYTES);
    (start, (start + share).min(CYCLE_BYTES))
}

fn open(group: &Group, dir: &Path, name: &str) -> Result<FileHandle> {
    let amode = AccessMode::RDWR | AccessMode::CREATE | AccessMode::DELETE_ON_CLOSE;
    Ok(FileHandle::open(group, dir.join(name), amode, &InfoHints::new())?)
}

fn sync_barrier_sync(group: &Group, fh: &mut FileHandle) -> Result<()> {
    fh.sync()?;
    group.barrier()?;
    fh.sync()?;
    Ok(())
}

/// Runs one suite on this rank. Every rank of the group must call it.
pub fn run_suite(group: &Group, suite: Suite, dir: &Path) -> Result<()> {
    match suite {
        Suite::Coll => coll(group, dir),
        Suite::Async => nonblocking(group, dir),
        Suite::Atomicity => atomicity(group, dir),
        Suite::Misc => misc(group, dir),
    }
}

fn coll(group: &Group, dir: &Path) -> Result<()> {
    let rank = group.rank();
    let expected = oracle();
    let (start, end) = slice_of(group);

    let mut fh = open(group, dir, "coll.dat")?;
    fh.seek(start as i64, Whence::Set)?;
    let st = fh.write_all(&expected, start, end - start)?;
    ensure!(st.count == end - start, "rank {rank}: write_all moved {}", st.count);
    sync_barrier_sync(group, &mut fh)?;
    fh.seek(0, Whence::Set)?;
    let mut got = vec![0u8; CYCLE_BYTES];
    let st = fh.read_all(&mut got, 0, CYCLE_BYTES)?;
    ensure!(st.count == CYCLE_BYTES, "rank {rank}: read_all moved {}", st.count);
    compare(rank, "read_all after write_all", &expected, &got)?;

    // explicit-offset collectives: every rank rewrites its slice reversed
    let reversed: Vec<u8> = expected.iter().map(|b| !b).collect();
    fh.write_at_all(start as i64, &reversed, start, end - start)?;
    sync_barrier_sync(group, &mut fh)?;
    let mut again = vec![0u8; CYCLE_BYTES];
    fh.read_at_all(0, &mut again, 0, CYCLE_BYTES)?;
    compare(rank, "read_at_all after write_at_all", &reversed, &again)?;
    fh.close()?;
    Ok(())
}

fn nonblocking(group: &Group, dir: &Path) -> Result<()> {
    let rank = group.rank();
    let expected = oracle();
    let (start, end) = slice_of(group);

    let mut fh = open(group, dir, "async.dat")?;
    fh.seek(start as i64, Whence::Set)?;
    let req = fh.iwrite(expected.clone(), start, end - start)?;
    let (st, _) = req.wait_with_buffer()?;
    ensure!(st.count == end - start, "rank {rank}: iwrite moved {}", st.count);
    sync_barrier_sync(group, &mut fh)?;

    fh.seek(0, Whence::Set)?;
    let mut req = fh.iread(vec![0u8; CYCLE_BYTES], 0, CYCLE_BYTES)?;
    let st = loop {
        if let Some(st) = req.test()? {
            break st;
        }
        std::thread::yield_now();
    };
    ensure!(st.count == CYCLE_BYTES, "rank {rank}: iread moved {}", st.count);
    let got = req.take_buffer().unwrap_or_default();
    compare(rank, "iread after iwrite", &expected, &got)?;

    let (st, got) = fh
        .iread_at(start as i64, vec![0u8; end - start], 0, end - start)?
        .wait_with_buffer()?;
    ensure!(st.count == end - start, "rank {rank}: iread_at moved {}", st.count);
    compare(rank, "iread_at of own slice", &expected[start..end], &got)?;
    fh.close()?;
    Ok(())
}

fn atomicity(group: &Group, dir: &Path) -> Result<()> {
    let rank = group.rank();
    let mut fh = open(group, dir, "atomicity.dat")?;
    fh.set_view(0, ElementType::Int32, ElementType::Int32, "native", &InfoHints::new())?;
    ensure!(!fh.get_atomicity()?, "rank {rank}: atomic mode on by default");

    fh.set_atomicity(true)?;
    let flags = group.all_gather(fh.get_atomicity()? as i64)?;
    println!("rank {rank}: get_atomicity() = {}", fh.get_atomicity()?);
    ensure!(
        flags.iter().all(|&f| f == 1),
        "rank {rank}: atomicity flags after set(true): {flags:?}"
    );

    // rank 0 writes the whole kilobyte; everyone reads it after a barrier
    let elems = CYCLE_BYTES / 4;
    let values: Vec<i32> = (0..elems as i32).map(|i| i * 5 + 1).collect();
    if rank == 0 {
        fh.write_at(0, &values, 0, elems)?;
    }
    group.barrier()?;
    let mut got = vec![0i32; elems];
    let st = fh.read_at(0, &mut got, 0, elems)?;
    ensure!(st.count == elems, "rank {rank}: read {} of {elems} elements", st.count);
    compare(
        rank,
        "atomic read after barrier",
        as_bytes(&values),
        as_bytes(&got),
    )?;

    fh.set_atomicity(false)?;
    let flags = group.all_gather(fh.get_atomicity()? as i64)?;
    ensure!(
        flags.iter().all(|&f| f == 0),
        "rank {rank}: atomicity flags after set(false): {flags:?}"
    );
    fh.close()?;
    Ok(())
}

fn as_bytes(v: &[i32]) -> &[u8] {
    bytemuck::cast_slice(v)
}

fn misc(group: &Group, dir: &Path) -> Result<()> {
    let rank = group.rank();
    let info = InfoHints::new();
    let mut fh = open(group, dir, "misc.dat")?;
    let elems = (CYCLE_BYTES / 4) as i64;
    // each rank gets its own kilobyte after a 16-byte header
    let disp = 16 + rank as i64 * CYCLE_BYTES as i64;
    fh.set_view(disp, ElementType::Int32, ElementType::Int32, "native", &info)?;
    ensure!(fh.get_position()? == 0, "rank {rank}: position not reset by set_view");

    let values: Vec<i32> = (0..elems as i32).map(|i| i ^ (rank as i32) << 16).collect();
    let half = elems as usize / 2;
    fh.write(&values, 0, half)?;
    ensure!(
        fh.get_position()? == half as i64,
        "rank {rank}: position {} after writing {half}",
        fh.get_position()?
    );
    fh.write(&values, half, elems as usize - half)?;
    let n = fh.get_position()?;
    ensure!(n == elems, "rank {rank}: position {n} after writing {elems}");
    let byte = fh.get_byte_offset(n)?;
    ensure!(
        byte == disp + n * 4,
        "rank {rank}: get_byte_offset({n}) = {byte}, expected {}",
        disp + n * 4
    );
    ensure!(fh.get_byte_offset(0)? == disp, "rank {rank}: get_byte_offset(0) != disp");

    fh.seek(-10, Whence::Cur)?;
    ensure!(fh.get_position()? == elems - 10, "rank {rank}: seek(-10, CUR)");
    let saved = fh.get_position()?;
    fh.seek(3, Whence::Set)?;
    ensure!(fh.get_position()? == 3, "rank {rank}: seek(3, SET)");
    fh.seek(saved, Whence::Set)?;
    ensure!(fh.get_position()? == saved, "rank {rank}: restoring saved position");
    if fh.seek(-1, Whence::Set).is_ok() {
        bail!("rank {rank}: seek to a negative position was accepted");
    }

    fh.seek(0, Whence::Set)?;
    let mut got = vec![0i32; elems as usize];
    let st = fh.read(&mut got, 0, elems as usize)?;
    ensure!(st.count == elems as usize, "rank {rank}: read {} elements", st.count);
    compare(rank, "read after write", as_bytes(&values), as_bytes(&got))?;
    ensure!(fh.get_position()? == elems, "rank {rank}: position after read");

    group.barrier()?;
    fh.seek(0, Whence::End)?;
    let end = fh.get_position()?;
    let size = fh.get_size()?;
    ensure!(
        end == (size - disp) / 4,
        "rank {rank}: seek(0, END) gave {end} for a {size}-byte file"
    );
    fh.close()?;
    Ok(())
}
