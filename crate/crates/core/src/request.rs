//! Completion handles for nonblocking and split-collective transfers.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;

use crate::error::{IoError, Result};
use crate::types::{Element, TransferStatus};

enum Phase<T> {
    Running,
    Done(Result<TransferStatus>, Vec<T>),
    Consumed,
}

pub(crate) struct Slot<T> {
    phase: Mutex<Phase<T>>,
    cond: Condvar,
    abandoned: AtomicBool,
}

impl<T> Slot<T> {
    fn phase(&self) -> MutexGuard<'_, Phase<T>> {
        self.phase.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn complete(&self, result: Result<TransferStatus>, buf: Vec<T>) {
        *self.phase() = Phase::Done(result, buf);
        self.cond.notify_all();
    }

    fn wait_done(&self) -> MutexGuard<'_, Phase<T>> {
        let mut phase = self.phase();
        while matches!(*phase, Phase::Running) {
            phase = self.cond.wait(phase).unwrap_or_else(|p| p.into_inner());
        }
        phase
    }
}

/// Type-erased view of a request, kept by the owning file handle so that
/// sync and close can find transfers that are still in flight.
pub(crate) trait Outstanding: Send + Sync {
    /// Blocks until the transfer itself has finished.
    fn settle(&self);
    /// The caller has collected the result (or the result was never owed).
    fn consumed(&self) -> bool;
    /// The `Request` was dropped without being waited on.
    fn abandoned(&self) -> bool;
}

impl<T: Send> Outstanding for Slot<T> {
    fn settle(&self) {
        drop(self.wait_done());
    }

    fn consumed(&self) -> bool {
        matches!(*self.phase(), Phase::Consumed)
    }

    fn abandoned(&self) -> bool {
        self.abandoned.load(Ordering::Acquire)
    }
}

/// A pending transfer. The buffer moves into the request at initiation and
/// comes back through [`Request::take_buffer`] once the request completes.
pub struct Request<T: Element> {
    slot: Arc<Slot<T>>,
    buffer: Option<Vec<T>>,
    requested: usize,
}

impl<T: Element> std::fmt::Debug for Request<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Request")
            .field("requested", &self.requested)
            .field("buffer_returned", &self.buffer.is_some())
            .finish()
    }
}

impl<T: Element> Request<T> {
    fn with_slot(slot: Arc<Slot<T>>, requested: usize) -> Self {
        Request {
            slot,
            buffer: None,
            requested,
        }
    }

    /// A request that is already complete.
    pub(crate) fn ready(result: Result<TransferStatus>, buf: Vec<T>, requested: usize) -> Self {
        let slot = Arc::new(Slot {
            phase: Mutex::new(Phase::Done(result, buf)),
            cond: Condvar::new(),
            abandoned: AtomicBool::new(false),
        });
        Request::with_slot(slot, requested)
    }

    /// Runs `work` on a helper thread. `work` gets the buffer and must hand
    /// it back alongside its result.
    pub(crate) fn spawn<F>(buf: Vec<T>, requested: usize, work: F) -> Self
    where
        F: FnOnce(&mut Vec<T>) -> Result<TransferStatus> + Send + 'static,
    {
        let slot = Arc::new(Slot {
            phase: Mutex::new(Phase::Running),
            cond: Condvar::new(),
            abandoned: AtomicBool::new(false),
        });
        let worker = Arc::clone(&slot);
        let spawned = thread::Builder::new()
            .name("pario-io".into())
            .spawn(move || {
                let mut buf = buf;
                let result = work(&mut buf);
                worker.complete(result, buf);
            });
        if let Err(e) = spawned {
            // the closure (and buffer) is gone; report the failure through the slot
            slot.complete(
                Err(IoError::backend(format!("cannot start transfer: {e}"))),
                Vec::new(),
            );
        }
        Request::with_slot(slot, requested)
    }

    pub(crate) fn tracker(&self) -> Arc<dyn Outstanding> {
        self.slot.clone()
    }

    /// Elements requested at initiation.
    pub fn requested(&self) -> usize {
        self.requested
    }

    /// Blocks until the transfer completes. A request yields its status
    /// exactly once; later calls fail with `HandleClosed`.
    pub fn wait(&mut self) -> Result<TransferStatus> {
        let slot = Arc::clone(&self.slot);
        let mut phase = slot.wait_done();
        self.collect(&mut phase).expect("transfer finished")
    }

    /// Polls without blocking. `Ok(None)` means still running.
    pub fn test(&mut self) -> Result<Option<TransferStatus>> {
        let slot = Arc::clone(&self.slot);
        let mut phase = slot.phase();
        self.collect(&mut phase).transpose()
    }

    fn collect(&mut self, phase: &mut Phase<T>) -> Option<Result<TransferStatus>> {
        match std::mem::replace(phase, Phase::Consumed) {
            Phase::Running => {
                *phase = Phase::Running;
                None
            }
            Phase::Done(result, buf) => {
                self.buffer = Some(buf);
                Some(result)
            }
            Phase::Consumed => Some(Err(IoError::closed("request already completed"))),
        }
    }

    /// The buffer handed over at initiation, available after completion.
    pub fn take_buffer(&mut self) -> Option<Vec<T>> {
        self.buffer.take()
    }

    /// Waits and returns both the status and the buffer.
    pub fn wait_with_buffer(mut self) -> Result<(TransferStatus, Vec<T>)> {
        let status = self.wait()?;
        Ok((status, self.buffer.take().unwrap_or_default()))
    }
}

impl<T: Element> Drop for Request<T> {
    fn drop(&mut self) {
        self.slot.abandoned.store(true, Ordering::Release);
    }
}
