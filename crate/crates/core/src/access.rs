//! Data access: explicit offsets, individual pointers and the shared
//! pointer, each in blocking, nonblocking, collective and split-collective
//! flavors.
//!
//! Buffers are `(buf, buf_offset, count)` triples in elements. Blocking calls
//! borrow the buffer; nonblocking and split calls take ownership and hand it
//! back on completion.

use std::mem::size_of;
use std::sync::Arc;

use crate::backend::Backend;
use crate::error::{IoError, Result};
use crate::file::{FileHandle, PendingSplit, SplitKind};
use crate::group::CounterId;
use crate::request::Request;
use crate::types::{Element, Offset, TransferStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    Read,
    Write,
}

/// Reads whole elements at byte `pos` into `out`; returns elements read.
fn read_elements<T: Element>(backend: &Backend, pos: u64, out: &mut [T]) -> Result<usize> {
    if out.is_empty() {
        return Ok(0);
    }
    let extent = size_of::<T>() as u64;
    let available = backend.size()?.saturating_sub(pos) / extent * extent;
    let bytes: &mut [u8] = bytemuck::cast_slice_mut(out);
    let want = (bytes.len() as u64).min(available) as usize;
    let n = backend.read_into(pos, &mut bytes[..want])?;
    Ok(n / extent as usize)
}

fn write_elements<T: Element>(backend: &Backend, pos: u64, data: &[T]) -> Result<usize> {
    backend.pwrite(pos, bytemuck::cast_slice(data))?;
    Ok(data.len())
}

/// Everything a transfer needs once positioning is settled. Cheap to move
/// onto a helper thread.
struct Transfer {
    backend: Arc<Backend>,
    pos: u64,
}

impl Transfer {
    fn read<T: Element>(&self, buf: &mut [T]) -> Result<TransferStatus> {
        read_elements(&self.backend, self.pos, buf).map(TransferStatus::new)
    }

    fn write<T: Element>(&self, buf: &[T]) -> Result<TransferStatus> {
        let n = write_elements(&self.backend, self.pos, buf)?;
        Ok(TransferStatus::new(n))
    }
}

impl FileHandle {
    fn prepare<T: Element>(
        &self,
        dir: Dir,
        buf_len: usize,
        buf_offset: usize,
        count: usize,
    ) -> Result<()> {
        self.check_open()?;
        if T::KIND != self.view.etype {
            return Err(IoError::unsupported_view(format!(
                "buffer etype {} does not match view etype {}",
                T::KIND,
                self.view.etype
            )));
        }
        match dir {
            Dir::Read if !self.amode.can_read() => {
                return Err(IoError::access("file not opened for reading"))
            }
            Dir::Write if !self.amode.can_write() => {
                return Err(IoError::access("file not opened for writing"))
            }
            _ => {}
        }
        match buf_offset.checked_add(count) {
            Some(end) if end <= buf_len => Ok(()),
            _ => Err(IoError::bad_offset(format!(
                "buffer range {buf_offset}+{count} exceeds buffer of {buf_len} elements"
            ))),
        }
    }

    fn transfer_at(&self, offset: Offset) -> Result<Transfer> {
        let pos = self.view.byte_offset(offset)?;
        Ok(Transfer {
            backend: Arc::clone(&self.backend),
            pos: pos as u64,
        })
    }

    /// Runs `f` under a coordinator range lock when atomic mode is on.
    fn guarded<R>(&self, pos: u64, bytes: usize, f: impl FnOnce() -> Result<R>) -> Result<R> {
        if !self.atomic || bytes == 0 {
            return f();
        }
        let start = pos as i64;
        let token = self
            .group
            .range_lock(self.file_id, start, start + bytes as i64)?;
        let result = f();
        let unlocked = self.group.range_unlock(token);
        let value = result?;
        unlocked?;
        Ok(value)
    }

    fn blocking_read<T: Element>(
        &self,
        offset: Offset,
        buf: &mut [T],
        buf_offset: usize,
        count: usize,
    ) -> Result<TransferStatus> {
        if count == 0 {
            return Ok(TransferStatus::new(0));
        }
        let t = self.transfer_at(offset)?;
        let target = &mut buf[buf_offset..buf_offset + count];
        self.guarded(t.pos, count * size_of::<T>(), || t.read(target))
    }

    fn blocking_write<T: Element>(
        &self,
        offset: Offset,
        buf: &[T],
        buf_offset: usize,
        count: usize,
    ) -> Result<TransferStatus> {
        if count == 0 {
            return Ok(TransferStatus::new(0));
        }
        let t = self.transfer_at(offset)?;
        let source = &buf[buf_offset..buf_offset + count];
        self.guarded(t.pos, count * size_of::<T>(), || {
            let status = t.write(source)?;
            if self.atomic {
                t.backend.publish()?;
            }
            Ok(status)
        })
    }

    /// Starts a transfer of `buf[buf_offset..buf_offset+count]` at element
    /// `offset`. In atomic mode the transfer completes before returning so
    /// that the range lock is never held across calls.
    fn start<T: Element>(
        &mut self,
        dir: Dir,
        offset: Offset,
        mut buf: Vec<T>,
        buf_offset: usize,
        count: usize,
    ) -> Result<Request<T>> {
        if count == 0 {
            return Ok(Request::ready(Ok(TransferStatus::new(0)), buf, 0));
        }
        if self.atomic {
            let result = match dir {
                Dir::Read => self.blocking_read(offset, &mut buf, buf_offset, count),
                Dir::Write => self.blocking_write(offset, &buf, buf_offset, count),
            };
            return Ok(Request::ready(result, buf, count));
        }
        let t = self.transfer_at(offset)?;
        let request = Request::spawn(buf, count, move |buf| {
            let range = buf_offset..buf_offset + count;
            match dir {
                Dir::Read => t.read(&mut buf[range]),
                Dir::Write => t.write(&buf[range]),
            }
        });
        self.outstanding.push(request.tracker());
        Ok(request)
    }

    /// Claims `count` elements from the shared pointer.
    fn claim_shared(&self, count: usize) -> Result<Offset> {
        self.group
            .fetch_add(CounterId::shared_pointer(self.file_id), count as i64)
    }

    /// Rank-ordered claim: every rank learns the shared pointer and all
    /// counts, and takes the region after lower ranks' regions.
    fn claim_ordered(&self, count: usize) -> Result<Offset> {
        let counts = self.group.all_gather(count as i64)?;
        let rank = self.group.rank() as usize;
        let total: i64 = counts.iter().sum();
        let before: i64 = counts[..rank].iter().sum();
        let payload = if rank == 0 {
            let base = if total > 0 {
                self.claim_shared(total as usize)
            } else {
                self.group.fetch_add(CounterId::shared_pointer(self.file_id), 0)
            };
            let bytes = base.map(|b| b.to_le_bytes().to_vec()).unwrap_or_default();
            self.group.broadcast(0, &bytes)?
        } else {
            self.group.broadcast(0, &[])?
        };
        let base: [u8; 8] = payload
            .as_slice()
            .try_into()
            .map_err(|_| IoError::coordinator("shared pointer unavailable on rank 0"))?;
        Ok(i64::from_le_bytes(base) + before)
    }

    fn begin_split<T: Element>(&mut self, kind: SplitKind, request: Request<T>) {
        self.pending_split = Some(PendingSplit {
            kind,
            request: Box::new(request),
        });
    }

    fn check_no_split(&self) -> Result<()> {
        self.check_open()?;
        if self.pending_split.is_some() {
            return Err(IoError::pending_split(
                "a split collective is already in progress on this file",
            ));
        }
        Ok(())
    }

    fn end_split<T: Element>(&mut self, kind: SplitKind) -> Result<(TransferStatus, Vec<T>)> {
        self.check_open()?;
        let pending = self
            .pending_split
            .take()
            .ok_or_else(|| IoError::pending_split("no split collective in progress"))?;
        if pending.kind != kind {
            let expected = pending.kind;
            self.pending_split = Some(pending);
            return Err(IoError::pending_split(format!(
                "split collective in progress is {expected:?}, not {kind:?}"
            )));
        }
        match pending.request.downcast::<Request<T>>() {
            Ok(request) => request.wait_with_buffer(),
            Err(request) => {
                self.pending_split = Some(PendingSplit { kind, request });
                Err(IoError::pending_split(
                    "end called with a different buffer type than begin",
                ))
            }
        }
    }

    // ----- explicit offsets -------------------------------------------------

    /// Reads `count` elements at view offset `offset`. Short at end of file.
    pub fn read_at<T: Element>(
        &self,
        offset: Offset,
        buf: &mut [T],
        buf_offset: usize,
        count: usize,
    ) -> Result<TransferStatus> {
        self.prepare::<T>(Dir::Read, buf.len(), buf_offset, count)?;
        self.blocking_read(offset, buf, buf_offset, count)
    }

    pub fn write_at<T: Element>(
        &self,
        offset: Offset,
        buf: &[T],
        buf_offset: usize,
        count: usize,
    ) -> Result<TransferStatus> {
        self.prepare::<T>(Dir::Write, buf.len(), buf_offset, count)?;
        self.blocking_write(offset, buf, buf_offset, count)
    }

    pub fn read_at_all<T: Element>(
        &self,
        offset: Offset,
        buf: &mut [T],
        buf_offset: usize,
        count: usize,
    ) -> Result<TransferStatus> {
        self.check_open()?;
        let checked = self.prepare::<T>(Dir::Read, buf.len(), buf_offset, count);
        self.group.barrier()?;
        checked?;
        self.blocking_read(offset, buf, buf_offset, count)
    }

    pub fn write_at_all<T: Element>(
        &self,
        offset: Offset,
        buf: &[T],
        buf_offset: usize,
        count: usize,
    ) -> Result<TransferStatus> {
        self.check_open()?;
        let checked = self.prepare::<T>(Dir::Write, buf.len(), buf_offset, count);
        self.group.barrier()?;
        checked?;
        self.blocking_write(offset, buf, buf_offset, count)
    }

    pub fn iread_at<T: Element>(
        &mut self,
        offset: Offset,
        buf: Vec<T>,
        buf_offset: usize,
        count: usize,
    ) -> Result<Request<T>> {
        self.prepare::<T>(Dir::Read, buf.len(), buf_offset, count)?;
        self.start(Dir::Read, offset, buf, buf_offset, count)
    }

    pub fn iwrite_at<T: Element>(
        &mut self,
        offset: Offset,
        buf: Vec<T>,
        buf_offset: usize,
        count: usize,
    ) -> Result<Request<T>> {
        self.prepare::<T>(Dir::Write, buf.len(), buf_offset, count)?;
        self.start(Dir::Write, offset, buf, buf_offset, count)
    }

    // ----- individual file pointer ------------------------------------------

    /// Reads at the individual pointer and advances it by the elements read.
    pub fn read<T: Element>(
        &mut self,
        buf: &mut [T],
        buf_offset: usize,
        count: usize,
    ) -> Result<TransferStatus> {
        self.prepare::<T>(Dir::Read, buf.len(), buf_offset, count)?;
        let status = self.blocking_read(self.pointer, buf, buf_offset, count)?;
        self.pointer += status.count as Offset;
        Ok(status)
    }

    pub fn write<T: Element>(
        &mut self,
        buf: &[T],
        buf_offset: usize,
        count: usize,
    ) -> Result<TransferStatus> {
        self.prepare::<T>(Dir::Write, buf.len(), buf_offset, count)?;
        let status = self.blocking_write(self.pointer, buf, buf_offset, count)?;
        self.pointer += status.count as Offset;
        Ok(status)
    }

    pub fn read_all<T: Element>(
        &mut self,
        buf: &mut [T],
        buf_offset: usize,
        count: usize,
    ) -> Result<TransferStatus> {
        self.check_open()?;
        let checked = self.prepare::<T>(Dir::Read, buf.len(), buf_offset, count);
        self.group.barrier()?;
        checked?;
        let status = self.blocking_read(self.pointer, buf, buf_offset, count)?;
        self.pointer += status.count as Offset;
        Ok(status)
    }

    pub fn write_all<T: Element>(
        &mut self,
        buf: &[T],
        buf_offset: usize,
        count: usize,
    ) -> Result<TransferStatus> {
        self.check_open()?;
        let checked = self.prepare::<T>(Dir::Write, buf.len(), buf_offset, count);
        self.group.barrier()?;
        checked?;
        let status = self.blocking_write(self.pointer, buf, buf_offset, count)?;
        self.pointer += status.count as Offset;
        Ok(status)
    }

    /// Nonblocking read at the individual pointer. The pointer advances by
    /// `count` immediately.
    pub fn iread<T: Element>(
        &mut self,
        buf: Vec<T>,
        buf_offset: usize,
        count: usize,
    ) -> Result<Request<T>> {
        self.prepare::<T>(Dir::Read, buf.len(), buf_offset, count)?;
        let request = self.start(Dir::Read, self.pointer, buf, buf_offset, count)?;
        self.pointer += count as Offset;
        Ok(request)
    }

    pub fn iwrite<T: Element>(
        &mut self,
        buf: Vec<T>,
        buf_offset: usize,
        count: usize,
    ) -> Result<Request<T>> {
        self.prepare::<T>(Dir::Write, buf.len(), buf_offset, count)?;
        let request = self.start(Dir::Write, self.pointer, buf, buf_offset, count)?;
        self.pointer += count as Offset;
        Ok(request)
    }

    // ----- shared file pointer ----------------------------------------------

    pub fn read_shared<T: Element>(
        &mut self,
        buf: &mut [T],
        buf_offset: usize,
        count: usize,
    ) -> Result<TransferStatus> {
        self.prepare::<T>(Dir::Read, buf.len(), buf_offset, count)?;
        if count == 0 {
            return Ok(TransferStatus::new(0));
        }
        let at = self.claim_shared(count)?;
        self.blocking_read(at, buf, buf_offset, count)
    }

    pub fn write_shared<T: Element>(
        &mut self,
        buf: &[T],
        buf_offset: usize,
        count: usize,
    ) -> Result<TransferStatus> {
        self.prepare::<T>(Dir::Write, buf.len(), buf_offset, count)?;
        if count == 0 {
            return Ok(TransferStatus::new(0));
        }
        let at = self.claim_shared(count)?;
        self.blocking_write(at, buf, buf_offset, count)
    }

    pub fn iread_shared<T: Element>(
        &mut self,
        buf: Vec<T>,
        buf_offset: usize,
        count: usize,
    ) -> Result<Request<T>> {
        self.prepare::<T>(Dir::Read, buf.len(), buf_offset, count)?;
        let at = if count > 0 { self.claim_shared(count)? } else { 0 };
        self.start(Dir::Read, at, buf, buf_offset, count)
    }

    pub fn iwrite_shared<T: Element>(
        &mut self,
        buf: Vec<T>,
        buf_offset: usize,
        count: usize,
    ) -> Result<Request<T>> {
        self.prepare::<T>(Dir::Write, buf.len(), buf_offset, count)?;
        let at = if count > 0 { self.claim_shared(count)? } else { 0 };
        self.start(Dir::Write, at, buf, buf_offset, count)
    }

    /// Collective read through the shared pointer in rank order.
    pub fn read_ordered<T: Element>(
        &mut self,
        buf: &mut [T],
        buf_offset: usize,
        count: usize,
    ) -> Result<TransferStatus> {
        self.check_open()?;
        let checked = self.prepare::<T>(Dir::Read, buf.len(), buf_offset, count);
        let claim = if checked.is_ok() { count } else { 0 };
        let at = self.claim_ordered(claim)?;
        checked?;
        let status = self.blocking_read(at, buf, buf_offset, count);
        self.group.barrier()?;
        status
    }

    /// Collective write through the shared pointer in rank order.
    pub fn write_ordered<T: Element>(
        &mut self,
        buf: &[T],
        buf_offset: usize,
        count: usize,
    ) -> Result<TransferStatus> {
        self.check_open()?;
        let checked = self.prepare::<T>(Dir::Write, buf.len(), buf_offset, count);
        let claim = if checked.is_ok() { count } else { 0 };
        let at = self.claim_ordered(claim)?;
        checked?;
        let status = self.blocking_write(at, buf, buf_offset, count);
        self.group.barrier()?;
        status
    }

    // ----- split collectives ------------------------------------------------

    fn split_begin<T: Element>(
        &mut self,
        kind: SplitKind,
        offset: Option<Offset>,
        buf: Vec<T>,
        buf_offset: usize,
        count: usize,
    ) -> Result<()> {
        self.check_no_split()?;
        let dir = match kind {
            SplitKind::ReadAtAll | SplitKind::ReadAll | SplitKind::ReadOrdered => Dir::Read,
            SplitKind::WriteAtAll | SplitKind::WriteAll | SplitKind::WriteOrdered => Dir::Write,
        };
        let checked = self.prepare::<T>(dir, buf.len(), buf_offset, count);
        let at = match kind {
            SplitKind::ReadOrdered | SplitKind::WriteOrdered => {
                self.claim_ordered(if checked.is_ok() { count } else { 0 })?
            }
            _ => {
                self.group.barrier()?;
                offset.unwrap_or(self.pointer)
            }
        };
        checked?;
        let request = self.start(dir, at, buf, buf_offset, count)?;
        if matches!(kind, SplitKind::ReadAll | SplitKind::WriteAll) {
            self.pointer += count as Offset;
        }
        self.begin_split(kind, request);
        Ok(())
    }

    pub fn read_at_all_begin<T: Element>(
        &mut self,
        offset: Offset,
        buf: Vec<T>,
        buf_offset: usize,
        count: usize,
    ) -> Result<()> {
        self.split_begin(SplitKind::ReadAtAll, Some(offset), buf, buf_offset, count)
    }

    pub fn read_at_all_end<T: Element>(&mut self) -> Result<(TransferStatus, Vec<T>)> {
        self.end_split(SplitKind::ReadAtAll)
    }

    pub fn write_at_all_begin<T: Element>(
        &mut self,
        offset: Offset,
        buf: Vec<T>,
        buf_offset: usize,
        count: usize,
    ) -> Result<()> {
        self.split_begin(SplitKind::WriteAtAll, Some(offset), buf, buf_offset, count)
    }

    pub fn write_at_all_end<T: Element>(&mut self) -> Result<(TransferStatus, Vec<T>)> {
        self.end_split(SplitKind::WriteAtAll)
    }

    pub fn read_all_begin<T: Element>(
        &mut self,
        buf: Vec<T>,
        buf_offset: usize,
        count: usize,
    ) -> Result<()> {
        self.split_begin(SplitKind::ReadAll, None, buf, buf_offset, count)
    }

    pub fn read_all_end<T: Element>(&mut self) -> Result<(TransferStatus, Vec<T>)> {
        self.end_split(SplitKind::ReadAll)
    }

    pub fn write_all_begin<T: Element>(
        &mut self,
        buf: Vec<T>,
        buf_offset: usize,
        count: usize,
    ) -> Result<()> {
        self.split_begin(SplitKind::WriteAll, None, buf, buf_offset, count)
    }

    pub fn write_all_end<T: Element>(&mut self) -> Result<(TransferStatus, Vec<T>)> {
        self.end_split(SplitKind::WriteAll)
    }

    pub fn read_ordered_begin<T: Element>(
        &mut self,
        buf: Vec<T>,
        buf_offset: usize,
        count: usize,
    ) -> Result<()> {
        self.split_begin(SplitKind::ReadOrdered, None, buf, buf_offset, count)
    }

    pub fn read_ordered_end<T: Element>(&mut self) -> Result<(TransferStatus, Vec<T>)> {
        self.end_split(SplitKind::ReadOrdered)
    }

    pub fn write_ordered_begin<T: Element>(
        &mut self,
        buf: Vec<T>,
        buf_offset: usize,
        count: usize,
    ) -> Result<()> {
        self.split_begin(SplitKind::WriteOrdered, None, buf, buf_offset, count)
    }

    pub fn write_ordered_end<T: Element>(&mut self) -> Result<(TransferStatus, Vec<T>)> {
        self.end_split(SplitKind::WriteOrdered)
    }
}
