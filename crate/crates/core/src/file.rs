//! Collectively opened files: lifecycle, info hints, views and consistency
//! controls.

use std::any::Any;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::debug;

use crate::backend::{Backend, Strategy};
use crate::error::{ErrorClass, IoError, Result};
use crate::group::{CounterId, Group};
use crate::request::Outstanding;
use crate::types::{AccessMode, ArgDigest, ElementType, InfoHints, Offset, Whence};

pub const NATIVE: &str = "native";

/// A process's window onto a file. Only contiguous views are supported, so
/// `filetype` always equals `etype`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileView {
    pub disp: Offset,
    pub etype: ElementType,
    pub filetype: ElementType,
    pub datarep: String,
}

impl Default for FileView {
    fn default() -> Self {
        FileView {
            disp: 0,
            etype: ElementType::Byte,
            filetype: ElementType::Byte,
            datarep: NATIVE.to_string(),
        }
    }
}

impl FileView {
    pub fn new(disp: Offset, etype: ElementType) -> Self {
        FileView {
            disp,
            etype,
            filetype: etype,
            datarep: NATIVE.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.disp < 0 {
            return Err(IoError::bad_offset(format!("negative displacement {}", self.disp)));
        }
        if self.filetype != self.etype {
            return Err(IoError::unsupported_view(format!(
                "filetype {} differs from etype {}",
                self.filetype, self.etype
            )));
        }
        if self.datarep != NATIVE {
            return Err(IoError::unsupported_view(format!(
                "data representation {:?} is not supported",
                self.datarep
            )));
        }
        Ok(())
    }

    /// Absolute byte position of view-relative element `offset`.
    pub fn byte_offset(&self, offset: Offset) -> Result<Offset> {
        if offset < 0 {
            return Err(IoError::bad_offset(format!("negative offset {offset}")));
        }
        offset
            .checked_mul(self.etype.extent() as i64)
            .and_then(|b| b.checked_add(self.disp))
            .ok_or_else(|| IoError::bad_offset(format!("offset {offset} overflows")))
    }

    /// Whole elements between the displacement and `file_size`.
    pub fn elements_in(&self, file_size: u64) -> Offset {
        let bytes = (file_size as i64 - self.disp).max(0);
        bytes / self.etype.extent() as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SplitKind {
    ReadAtAll,
    WriteAtAll,
    ReadAll,
    WriteAll,
    ReadOrdered,
    WriteOrdered,
}

pub(crate) struct PendingSplit {
    pub kind: SplitKind,
    /// A boxed `Request<T>` for the element type used at begin.
    pub request: Box<dyn Any + Send>,
}

/// An open parallel file.
pub struct FileHandle {
    pub(crate) group: Group,
    pub(crate) file_id: u64,
    pub(crate) path: PathBuf,
    pub(crate) amode: AccessMode,
    pub(crate) view: FileView,
    pub(crate) atomic: bool,
    pub(crate) pointer: Offset,
    pub(crate) info: InfoHints,
    pub(crate) pending_split: Option<PendingSplit>,
    pub(crate) outstanding: Vec<Arc<dyn Outstanding>>,
    pub(crate) backend: Arc<Backend>,
    pub(crate) open: bool,
}

impl std::fmt::Debug for FileHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FileHandle")
            .field("rank", &self.group.rank())
            .field("file_id", &self.file_id)
            .field("path", &self.path)
            .field("amode", &self.amode)
            .field("view", &self.view)
            .field("atomic", &self.atomic)
            .field("pointer", &self.pointer)
            .field("open", &self.open)
            .finish()
    }
}

/// Every rank contributes a digest of its arguments; any disagreement fails
/// the call on all ranks.
pub(crate) fn agree(group: &Group, digest: i64, what: &str) -> Result<()> {
    let all = group.all_gather(digest)?;
    if all.iter().any(|d| *d != all[0]) {
        return Err(IoError::mismatch(format!(
            "ranks passed different arguments to {what}"
        )));
    }
    Ok(())
}

fn encode_outcome(outcome: &Result<(u64, u64)>) -> Vec<u8> {
    match outcome {
        Ok((id, size)) => {
            let mut out = vec![0u8];
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(&size.to_le_bytes());
            out
        }
        Err(e) => {
            let mut out = vec![1u8, e.class.code()];
            out.extend_from_slice(e.detail.as_bytes());
            out
        }
    }
}

fn decode_outcome(bytes: &[u8]) -> Result<(u64, u64)> {
    match bytes {
        [0, rest @ ..] if rest.len() == 16 => Ok((
            u64::from_le_bytes(rest[..8].try_into().unwrap()),
            u64::from_le_bytes(rest[8..].try_into().unwrap()),
        )),
        [1, class, detail @ ..] => Err(IoError::new(
            ErrorClass::from_code(*class).unwrap_or(ErrorClass::CoordinatorFailure),
            String::from_utf8_lossy(detail),
        )),
        _ => Err(IoError::coordinator("malformed open outcome")),
    }
}

impl FileHandle {
    /// Collective open with the default positional backend.
    pub fn open(
        group: &Group,
        path: impl AsRef<Path>,
        amode: AccessMode,
        info: &InfoHints,
    ) -> Result<FileHandle> {
        Self::open_with(group, path, amode, info, Strategy::default())
    }

    /// Collective open. Rank 0 makes the create/exists decision and
    /// registers the file with the coordinator; the outcome is broadcast and
    /// every rank then opens its own descriptor.
    pub fn open_with(
        group: &Group,
        path: impl AsRef<Path>,
        amode: AccessMode,
        info: &InfoHints,
        strategy: Strategy,
    ) -> Result<FileHandle> {
        let path = path.as_ref().to_path_buf();
        let name = path.to_string_lossy().into_owned();
        let digest = ArgDigest::new("open")
            .bytes(name.as_bytes())
            .int(amode.bits() as i64)
            .value();
        agree(group, digest, "open")?;
        amode.validate()?;

        let mut root_backend = None;
        let payload = if group.rank() == 0 {
            let outcome = Backend::open(&path, amode, strategy).and_then(|b| {
                let size = b.size()?;
                let id = group.register_file(&name)?;
                if amode.contains(AccessMode::APPEND) && size > 0 {
                    group.fetch_add(CounterId::shared_pointer(id), size as i64)?;
                }
                root_backend = Some(b);
                Ok((id, size))
            });
            group.broadcast(0, &encode_outcome(&outcome))?
        } else {
            group.broadcast(0, &[])?
        };
        let (file_id, size) = decode_outcome(&payload)?;

        let backend = match root_backend {
            Some(b) => b,
            None => Backend::open(
                &path,
                amode - AccessMode::CREATE - AccessMode::EXCL,
                strategy,
            )?,
        };
        let pointer = if amode.contains(AccessMode::APPEND) {
            size as Offset
        } else {
            0
        };
        debug!("rank {} opened {} as file {file_id}", group.rank(), path.display());
        Ok(FileHandle {
            group: group.clone(),
            file_id,
            path,
            amode,
            view: FileView::default(),
            atomic: false,
            pointer,
            info: info.clone(),
            pending_split: None,
            outstanding: Vec::new(),
            backend: Arc::new(backend),
            open: true,
        })
    }

    /// Removes a file that is not open. Not collective.
    pub fn delete(path: impl AsRef<Path>, _info: &InfoHints) -> Result<()> {
        let path = path.as_ref();
        fs::remove_file(path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => IoError::no_such_file(format!("{}: {e}", path.display())),
            _ => IoError::backend(format!("{}: {e}", path.display())),
        })
    }

    pub(crate) fn check_open(&self) -> Result<()> {
        if self.open {
            Ok(())
        } else {
            Err(IoError::closed(format!("{} is closed", self.path.display())))
        }
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn file_id(&self) -> u64 {
        self.file_id
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn amode(&self) -> AccessMode {
        self.amode
    }

    pub fn strategy(&self) -> Strategy {
        self.backend.strategy()
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    /// Waits for transfers whose request handles were dropped and forgets
    /// the ones already collected. Fails if a live request is unfinished.
    pub(crate) fn settle_outstanding(&mut self, strict: bool) -> Result<()> {
        self.outstanding.retain(|r| !r.consumed());
        for r in &self.outstanding {
            if r.abandoned() || !strict {
                r.settle();
            } else {
                return Err(IoError::pending_split(
                    "a nonblocking request on this file has not been completed",
                ));
            }
        }
        self.outstanding.retain(|r| !r.abandoned());
        Ok(())
    }

    /// Collective close. Blocks until in-flight nonblocking transfers land.
    pub fn close(&mut self) -> Result<()> {
        self.check_open()?;
        if self.pending_split.is_some() {
            return Err(IoError::pending_split(
                "cannot close with a split collective in progress",
            ));
        }
        self.settle_outstanding(false)?;
        self.open = false;
        let closed = self.backend.close();
        self.group.barrier()?;
        if self.group.rank() == 0 {
            self.group.release_file(self.file_id)?;
        }
        if self.amode.contains(AccessMode::DELETE_ON_CLOSE) {
            if self.group.rank() == 0 {
                FileHandle::delete(&self.path, &self.info)?;
            }
            self.group.barrier()?;
        }
        closed
    }

    /// Current size in bytes. Local.
    pub fn get_size(&self) -> Result<Offset> {
        self.check_open()?;
        Ok(self.backend.size()? as Offset)
    }

    fn resize(&mut self, op: &str, size: Offset, shrink: bool) -> Result<()> {
        self.check_open()?;
        agree(&self.group, ArgDigest::new(op).int(size).value(), op)?;
        if !self.amode.can_write() {
            return Err(IoError::access(format!("{op} requires write access")));
        }
        if size < 0 {
            return Err(IoError::bad_offset(format!("{op}({size})")));
        }
        self.settle_outstanding(false)?;
        let result = if self.group.rank() == 0 {
            let current = self.backend.size()?;
            if shrink || current < size as u64 {
                self.backend.set_len(size as u64)
            } else {
                Ok(())
            }
        } else {
            Ok(())
        };
        self.group.barrier()?;
        self.backend.invalidate();
        result
    }

    /// Collective truncate or extend to `size` bytes.
    pub fn set_size(&mut self, size: Offset) -> Result<()> {
        self.resize("set_size", size, true)
    }

    /// Collective; ensures at least `size` bytes exist, zero-extending if
    /// the file is shorter.
    pub fn preallocate(&mut self, size: Offset) -> Result<()> {
        self.resize("preallocate", size, false)
    }

    /// Collective. New keys are added, existing keys overwritten.
    pub fn set_info(&mut self, info: &InfoHints) -> Result<()> {
        self.check_open()?;
        let mut d = ArgDigest::new("set_info");
        for (k, v) in info.iter() {
            d.bytes(k.as_bytes()).bytes(v.as_bytes());
        }
        agree(&self.group, d.value(), "set_info")?;
        self.info.merge(info);
        Ok(())
    }

    pub fn get_info(&self) -> Result<InfoHints> {
        self.check_open()?;
        Ok(self.info.clone())
    }

    /// Collective. Resets the individual pointer on every rank and the
    /// shared pointer of the file.
    ///
    /// The etype and data representation must agree across ranks; the
    /// displacement may differ per rank.
    pub fn set_view(
        &mut self,
        disp: Offset,
        etype: ElementType,
        filetype: ElementType,
        datarep: &str,
        _info: &InfoHints,
    ) -> Result<()> {
        self.check_open()?;
        if self.pending_split.is_some() {
            return Err(IoError::pending_split(
                "cannot change the view with a split collective in progress",
            ));
        }
        let digest = ArgDigest::new("set_view")
            .int(etype.code() as i64)
            .bytes(datarep.as_bytes())
            .value();
        agree(&self.group, digest, "set_view")?;
        let view = FileView {
            disp,
            etype,
            filetype,
            datarep: datarep.to_string(),
        };
        view.validate()?;
        self.view = view;
        self.pointer = 0;
        if self.group.rank() == 0 {
            let counter = CounterId::shared_pointer(self.file_id);
            let current = self.group.fetch_add(counter, 0)?;
            self.group.fetch_add(counter, -current)?;
        }
        self.group.barrier()
    }

    pub fn get_view(&self) -> Result<FileView> {
        self.check_open()?;
        Ok(self.view.clone())
    }

    /// Collective; every rank must pass the same flag.
    pub fn set_atomicity(&mut self, flag: bool) -> Result<()> {
        self.check_open()?;
        agree(
            &self.group,
            ArgDigest::new("set_atomicity").int(flag as i64).value(),
            "set_atomicity",
        )?;
        self.atomic = flag;
        Ok(())
    }

    pub fn get_atomicity(&self) -> Result<bool> {
        self.check_open()?;
        Ok(self.atomic)
    }

    /// Collective. Pushes this process's writes to storage; afterwards,
    /// flushed updates from other processes are visible to this handle.
    pub fn sync(&mut self) -> Result<()> {
        self.check_open()?;
        if self.pending_split.is_some() {
            return Err(IoError::pending_split(
                "cannot sync with a split collective in progress",
            ));
        }
        self.settle_outstanding(true)?;
        self.backend.flush()?;
        self.backend.invalidate();
        Ok(())
    }

    /// Individual pointer in etype units relative to the view.
    pub fn get_position(&self) -> Result<Offset> {
        self.check_open()?;
        Ok(self.pointer)
    }

    /// Converts a view-relative element offset to an absolute byte offset.
    pub fn get_byte_offset(&self, offset: Offset) -> Result<Offset> {
        self.check_open()?;
        self.view.byte_offset(offset)
    }

    pub(crate) fn size_in_elements(&self) -> Result<Offset> {
        Ok(self.view.elements_in(self.backend.size()?))
    }

    pub fn seek(&mut self, offset: Offset, whence: Whence) -> Result<()> {
        self.check_open()?;
        let base = match whence {
            Whence::Set => 0,
            Whence::Cur => self.pointer,
            Whence::End => self.size_in_elements()?,
        };
        let target = base
            .checked_add(offset)
            .ok_or_else(|| IoError::bad_offset("seek overflows"))?;
        if target < 0 {
            return Err(IoError::bad_offset(format!(
                "seek to {target} (before start of view)"
            )));
        }
        self.pointer = target;
        Ok(())
    }

    /// Collective; all ranks must pass the same arguments.
    pub fn seek_shared(&mut self, offset: Offset, whence: Whence) -> Result<()> {
        self.check_open()?;
        let digest = ArgDigest::new("seek_shared")
            .int(offset)
            .int(whence.code() as i64)
            .value();
        agree(&self.group, digest, "seek_shared")?;
        let counter = CounterId::shared_pointer(self.file_id);
        let payload = if self.group.rank() == 0 {
            let outcome = (|| {
                let current = self.group.fetch_add(counter, 0)?;
                let base = match whence {
                    Whence::Set => 0,
                    Whence::Cur => current,
                    Whence::End => self.size_in_elements()?,
                };
                let target = base
                    .checked_add(offset)
                    .filter(|t| *t >= 0)
                    .ok_or_else(|| IoError::bad_offset("shared seek before start of view"))?;
                self.group.fetch_add(counter, target - current)?;
                Ok((target as u64, 0))
            })();
            self.group.broadcast(0, &encode_outcome(&outcome))?
        } else {
            self.group.broadcast(0, &[])?
        };
        decode_outcome(&payload).map(|_| ())
    }

    /// Current shared pointer in etype units. Local query.
    pub fn get_position_shared(&self) -> Result<Offset> {
        self.check_open()?;
        self.group
            .fetch_add(CounterId::shared_pointer(self.file_id), 0)
    }
}

impl Drop for FileHandle {
    fn drop(&mut self) {
        if self.open {
            for r in &self.outstanding {
                r.settle();
            }
            let _ = self.backend.close();
        }
    }
}
