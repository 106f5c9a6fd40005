//! Parallel file I/O with MPI-IO style semantics.
//!
//! A group of cooperating processes (see [`group`]) collectively opens a
//! file and then accesses it through explicit offsets, per-process file
//! pointers or a single shared file pointer. Every access family comes in
//! blocking, nonblocking and collective forms, and the collective ones also
//! have split begin/end forms. Consistency across processes is obtained
//! either with atomic mode or with the sync-barrier-sync pattern.
//!
//! ```no_run
//! use pario::{AccessMode, ElementType, FileHandle, Group, InfoHints};
//!
//! let group = Group::from_env()?;
//! let info = InfoHints::new();
//! let mut file = FileHandle::open(&group, "workfile", AccessMode::RDWR | AccessMode::CREATE, &info)?;
//! file.set_view(0, ElementType::Int32, ElementType::Int32, "native", &info)?;
//! file.set_atomicity(true)?;
//! if group.rank() == 0 {
//!     file.write_at(0, &[5i32; 10], 0, 10)?;
//! }
//! group.barrier()?;
//! let mut b = [0i32; 10];
//! file.read_at(0, &mut b, 0, 10)?;
//! file.close()?;
//! group.finalize()?;
//! # Ok::<(), pario::IoError>(())
//! ```

mod access;
pub mod backend;
pub mod error;
pub mod file;
pub mod group;
pub mod local;
pub mod request;
pub mod types;

pub use backend::{Backend, Strategy};
pub use error::{ErrorClass, IoError, Result};
pub use file::{FileHandle, FileView};
pub use group::{Coordinator, CoordinatorHandle, CoordinatorReport, CounterId, Event, Group, LockToken};
pub use request::Request;
pub use types::{AccessMode, Element, ElementType, InfoHints, Offset, TransferStatus, Whence};
