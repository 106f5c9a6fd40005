//! Storage strategies behind a single interface.
//!
//! `Positional` issues `pread`/`pwrite` on the descriptor and never touches a
//! shared cursor. `Mapped` copies through a memory-mapped window that is
//! moved in 16 MiB aligned chunks as accesses require.

use std::fs::{self, File, OpenOptions};
use std::io::{self, ErrorKind};
use std::os::unix::fs::FileExt;
use std::os::unix::io::AsRawFd;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Mutex, MutexGuard};

use memmap2::{Mmap, MmapMut, MmapOptions};

use crate::error::{IoError, Result};
use crate::types::AccessMode;

/// Mapping granularity for the `Mapped` strategy.
pub const MAP_CHUNK: u64 = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Strategy {
    #[default]
    Positional,
    Mapped,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "positional" => Ok(Strategy::Positional),
            "mapped" => Ok(Strategy::Mapped),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Strategy::Positional => "positional",
            Strategy::Mapped => "mapped",
        })
    }
}

enum Mapping {
    ReadOnly(Mmap),
    ReadWrite(MmapMut),
}

impl Mapping {
    fn bytes(&self) -> &[u8] {
        match self {
            Mapping::ReadOnly(m) => m,
            Mapping::ReadWrite(m) => m,
        }
    }
}

struct Window {
    base: u64,
    map: Mapping,
}

impl Window {
    fn covers(&self, start: u64, end: u64) -> bool {
        start >= self.base && end <= self.base + self.map.bytes().len() as u64
    }
}

pub struct Backend {
    file: File,
    strategy: Strategy,
    amode: AccessMode,
    window: Mutex<Option<Window>>,
    closed: AtomicBool,
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend")
            .field("strategy", &self.strategy)
            .field("amode", &self.amode)
            .finish_non_exhaustive()
    }
}

fn io_error(path: &Path, e: io::Error) -> IoError {
    match e.kind() {
        ErrorKind::NotFound => IoError::no_such_file(format!("{}: {e}", path.display())),
        _ => IoError::backend(format!("{}: {e}", path.display())),
    }
}

impl Backend {
    /// Opens `path` according to `amode`. `CREATE` and `EXCL` are honored
    /// here; the mapping itself is deferred until the first access.
    pub fn open(path: impl AsRef<Path>, amode: AccessMode, strategy: Strategy) -> Result<Backend> {
        let path = path.as_ref();
        amode.validate()?;
        match fs::metadata(path) {
            Ok(meta) if meta.is_dir() => {
                return Err(IoError::backend(format!("{} is a directory", path.display())))
            }
            _ => {}
        }
        let mut opts = OpenOptions::new();
        // a shared writable mapping needs a readable descriptor
        opts.read(amode.can_read() || strategy == Strategy::Mapped)
            .write(amode.can_write());
        if amode.contains(AccessMode::CREATE) {
            if amode.contains(AccessMode::EXCL) {
                opts.create_new(true);
            } else {
                opts.create(true);
            }
        }
        let file = opts.open(path).map_err(|e| io_error(path, e))?;
        Ok(Backend {
            file,
            strategy,
            amode,
            window: Mutex::new(None),
            closed: AtomicBool::new(false),
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    fn check_open(&self) -> Result<()> {
        if self.closed.load(Ordering::Acquire) {
            Err(IoError::closed("backend is closed"))
        } else {
            Ok(())
        }
    }

    fn window(&self) -> MutexGuard<'_, Option<Window>> {
        self.window.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn size(&self) -> Result<u64> {
        self.check_open()?;
        self.file
            .metadata()
            .map(|m| m.len())
            .map_err(|e| IoError::backend(format!("stat: {e}")))
    }

    /// Reads up to `len` bytes at `offset`; shorter only at end of file.
    pub fn pread(&self, offset: u64, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        let n = self.read_into(offset, &mut buf)?;
        buf.truncate(n);
        Ok(buf)
    }

    /// Fills `buf` from `offset`; returns bytes read, short only at EOF.
    pub fn read_into(&self, offset: u64, buf: &mut [u8]) -> Result<usize> {
        self.check_open()?;
        if !self.amode.can_read() {
            return Err(IoError::access("file not opened for reading"));
        }
        if buf.is_empty() {
            return Ok(0);
        }
        match self.strategy {
            Strategy::Positional => self.positional_read(offset, buf),
            Strategy::Mapped => self.mapped_read(offset, buf),
        }
    }

    pub fn pwrite(&self, offset: u64, data: &[u8]) -> Result<()> {
        self.check_open()?;
        if !self.amode.can_write() {
            return Err(IoError::access("file not opened for writing"));
        }
        if data.is_empty() {
            return Ok(());
        }
        match self.strategy {
            Strategy::Positional => self
                .file
                .write_all_at(data, offset)
                .map_err(|e| IoError::backend(format!("pwrite at {offset}: {e}"))),
            Strategy::Mapped => self.mapped_write(offset, data),
        }
    }

    /// Hands dirty data to the storage device.
    pub fn flush(&self) -> Result<()> {
        self.check_open()?;
        if let Some(Window {
            map: Mapping::ReadWrite(m),
            ..
        }) = self.window().as_ref()
        {
            m.flush().map_err(|e| IoError::backend(format!("msync: {e}")))?;
        }
        if self.amode.can_write() {
            self.file
                .sync_data()
                .map_err(|e| IoError::backend(format!("fsync: {e}")))?;
        }
        Ok(())
    }

    /// Starts write-back of mapped dirty pages without waiting. Positional
    /// writes are already in the kernel once `pwrite` returns.
    pub fn publish(&self) -> Result<()> {
        self.check_open()?;
        if let Some(Window {
            map: Mapping::ReadWrite(m),
            ..
        }) = self.window().as_ref()
        {
            m.flush_async()
                .map_err(|e| IoError::backend(format!("msync: {e}")))?;
        }
        Ok(())
    }

    /// Truncates or extends; extension reads back as zeros.
    pub fn set_len(&self, size: u64) -> Result<()> {
        self.check_open()?;
        if !self.amode.can_write() {
            return Err(IoError::access("file not opened for writing"));
        }
        self.invalidate();
        self.file
            .set_len(size)
            .map_err(|e| IoError::backend(format!("set_len({size}): {e}")))
    }

    /// Drops the mapped window so the next access remaps against the
    /// current file size.
    pub fn invalidate(&self) {
        self.window().take();
    }

    pub fn close(&self) -> Result<()> {
        if self.closed.swap(true, Ordering::AcqRel) {
            return Err(IoError::closed("backend already closed"));
        }
        self.invalidate();
        Ok(())
    }

    fn positional_read(&self, offset: u64, buf: &mut [u8]) -> Result<usize> {
        let mut done = 0;
        while done < buf.len() {
            match self.file.read_at(&mut buf[done..], offset + done as u64) {
                Ok(0) => break,
                Ok(n) => done += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(IoError::backend(format!("pread at {offset}: {e}"))),
            }
        }
        Ok(done)
    }

    fn mapped_read(&self, offset: u64, buf: &mut [u8]) -> Result<usize> {
        let size = self.size()?;
        if offset >= size {
            return Ok(0);
        }
        let n = (size - offset).min(buf.len() as u64) as usize;
        let mut window = self.window();
        let w = self.cover(&mut window, offset, offset + n as u64)?;
        let at = (offset - w.base) as usize;
        buf[..n].copy_from_slice(&w.map.bytes()[at..at + n]);
        Ok(n)
    }

    fn mapped_write(&self, offset: u64, data: &[u8]) -> Result<()> {
        let end = offset + data.len() as u64;
        if end > self.size()? && !self.extend(offset, data.len() as u64) {
            // filesystem cannot grow the file in place; let the kernel extend it
            return self
                .file
                .write_all_at(data, offset)
                .map_err(|e| IoError::backend(format!("pwrite at {offset}: {e}")));
        }
        let mut window = self.window();
        let w = self.cover(&mut window, offset, end)?;
        let at = (offset - w.base) as usize;
        match &mut w.map {
            Mapping::ReadWrite(m) => m[at..at + data.len()].copy_from_slice(data),
            Mapping::ReadOnly(_) => return Err(IoError::access("mapping is read-only")),
        }
        Ok(())
    }

    /// Grows the file to cover `[offset, offset+len)` without shrinking it or
    /// touching existing bytes, even when other processes extend it
    /// concurrently.
    fn extend(&self, offset: u64, len: u64) -> bool {
        #[cfg(target_os = "linux")]
        {
            let rc = unsafe {
                libc::fallocate(
                    self.file.as_raw_fd(),
                    0,
                    offset as libc::off_t,
                    len as libc::off_t,
                )
            };
            rc == 0
        }
        #[cfg(not(target_os = "linux"))]
        {
            let _ = (offset, len);
            false
        }
    }

    fn cover<'w>(
        &self,
        window: &'w mut Option<Window>,
        start: u64,
        end: u64,
    ) -> Result<&'w mut Window> {
        if !window.as_ref().is_some_and(|w| w.covers(start, end)) {
            let base = start / MAP_CHUNK * MAP_CHUNK;
            let stop = end.div_ceil(MAP_CHUNK) * MAP_CHUNK;
            let len = (stop - base) as usize;
            let mut opts = MmapOptions::new();
            opts.offset(base).len(len);
            // SAFETY: the mapping is only read within the current file size
            // and written after the file has been extended to cover the range.
            let map = unsafe {
                if self.amode.can_write() {
                    opts.map_mut(&self.file).map(Mapping::ReadWrite)
                } else {
                    opts.map(&self.file).map(Mapping::ReadOnly)
                }
            }
            .map_err(|e| IoError::backend(format!("mmap [{base}, {stop}): {e}")))?;
            *window = Some(Window { base, map });
        }
        Ok(window.as_mut().unwrap())
    }
}
