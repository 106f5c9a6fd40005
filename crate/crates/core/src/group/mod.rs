//! SPMD process group: rank/size identity plus the handful of collectives,
//! shared counters and byte-range locks the file layer needs. Every call is
//! mediated by a [`Coordinator`] over a framed TCP protocol.

pub mod coordinator;
pub mod protocol;

use std::env;
use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use log::debug;

pub use coordinator::{Coordinator, CoordinatorHandle, CoordinatorReport, Event};
use protocol::{read_frame, write_frame, Frame};

use crate::error::{IoError, Result};

pub const ENV_RANK: &str = "PARIO_RANK";
pub const ENV_SIZE: &str = "PARIO_SIZE";
pub const ENV_COORD: &str = "PARIO_COORD";

const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

/// Names one shared counter kept by the coordinator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CounterId {
    pub file_id: u64,
    pub counter: u8,
}

impl CounterId {
    /// Counter slot holding a file's shared pointer.
    pub const SHARED_POINTER: u8 = 0;

    pub fn shared_pointer(file_id: u64) -> Self {
        CounterId {
            file_id,
            counter: Self::SHARED_POINTER,
        }
    }
}

/// A granted byte-range lock. Release with [`Group::range_unlock`].
#[derive(Debug, PartialEq, Eq, Hash)]
#[must_use = "a lock token must be released with range_unlock"]
pub struct LockToken(u64);

impl LockToken {
    pub fn id(&self) -> u64 {
        self.0
    }
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    epoch: u64,
}

impl Connection {
    fn send(&mut self, frame: &Frame) -> Result<()> {
        write_frame(&mut self.writer, frame)
            .map_err(|e| IoError::coordinator(format!("send failed: {e}")))
    }

    fn recv(&mut self) -> Result<Frame> {
        match read_frame(&mut self.reader) {
            Ok(Some(Frame::Error { class, message })) => Err(IoError::new(class, message)),
            Ok(Some(frame)) => Ok(frame),
            Ok(None) => Err(IoError::coordinator("coordinator closed the connection")),
            Err(e) => Err(IoError::coordinator(format!("receive failed: {e}"))),
        }
    }

    fn call(&mut self, frame: &Frame) -> Result<Frame> {
        self.send(frame)?;
        self.recv()
    }
}

struct Inner {
    rank: u32,
    size: u32,
    endpoint: String,
    conn: Mutex<Option<Connection>>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        let conn = self.conn.get_mut().unwrap_or_else(|p| p.into_inner());
        if let Some(mut c) = conn.take() {
            // a panicking member just drops the connection so the rest of
            // the group is told it failed
            if !std::thread::panicking() {
                let _ = c.send(&Frame::Finalize);
            }
        }
    }
}

/// Handle on this process's membership in a group. Cheap to clone; clones
/// share one coordinator connection.
#[derive(Clone)]
pub struct Group {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Group")
            .field("rank", &self.inner.rank)
            .field("size", &self.inner.size)
            .field("endpoint", &self.inner.endpoint)
            .finish()
    }
}

fn unexpected(what: &str, frame: Frame) -> IoError {
    IoError::coordinator(format!("expected {what}, got tag 0x{:02x}", frame.tag()))
}

impl Group {
    /// Connects to the coordinator and joins as `rank`. Returns once all
    /// `size` members have joined.
    pub fn init(rank: u32, size: u32, coordinator: &str) -> Result<Group> {
        if size == 0 || rank >= size {
            return Err(IoError::coordinator(format!(
                "rank {rank} invalid for group size {size}"
            )));
        }
        let addr = coordinator
            .to_socket_addrs()
            .map_err(|e| IoError::coordinator(format!("resolve {coordinator}: {e}")))?
            .next()
            .ok_or_else(|| IoError::coordinator(format!("no address for {coordinator}")))?;
        let stream = TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT)
            .map_err(|e| IoError::coordinator(format!("connect {coordinator}: {e}")))?;
        stream
            .set_nodelay(true)
            .map_err(|e| IoError::coordinator(e.to_string()))?;
        let reader = stream
            .try_clone()
            .map_err(|e| IoError::coordinator(e.to_string()))?;
        let mut conn = Connection {
            reader: BufReader::new(reader),
            writer: BufWriter::new(stream),
            epoch: 0,
        };
        match conn.call(&Frame::Join { rank })? {
            Frame::JoinAck { size: agreed } if agreed == size => {}
            Frame::JoinAck { size: agreed } => {
                return Err(IoError::coordinator(format!(
                    "coordinator expects {agreed} members, this process was told {size}"
                )))
            }
            other => return Err(unexpected("JOIN_ACK", other)),
        }
        debug!("rank {rank}/{size} joined {coordinator}");
        Ok(Group {
            inner: Arc::new(Inner {
                rank,
                size,
                endpoint: coordinator.to_string(),
                conn: Mutex::new(Some(conn)),
            }),
        })
    }

    /// Joins using `PARIO_RANK`, `PARIO_SIZE` and `PARIO_COORD`.
    pub fn from_env() -> Result<Group> {
        let var = |name: &str| {
            env::var(name).map_err(|_| IoError::coordinator(format!("{name} is not set")))
        };
        let parse = |name: &str| -> Result<u32> {
            var(name)?
                .trim()
                .parse()
                .map_err(|_| IoError::coordinator(format!("{name} is not an integer")))
        };
        let rank = parse(ENV_RANK)?;
        let size = parse(ENV_SIZE)?;
        Group::init(rank, size, &var(ENV_COORD)?)
    }

    pub fn rank(&self) -> u32 {
        self.inner.rank
    }

    pub fn size(&self) -> u32 {
        self.inner.size
    }

    pub fn endpoint(&self) -> &str {
        &self.inner.endpoint
    }

    fn conn(&self) -> Result<ConnGuard<'_>> {
        let guard = self.inner.conn.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            return Err(IoError::closed("group already finalized"));
        }
        Ok(ConnGuard(guard))
    }

    /// No member returns before every member has entered.
    pub fn barrier(&self) -> Result<()> {
        let mut c = self.conn()?;
        let c = c.get();
        c.epoch += 1;
        let epoch = c.epoch;
        match c.call(&Frame::Barrier { epoch })? {
            Frame::BarrierRelease { epoch: e } if e == epoch => Ok(()),
            Frame::BarrierRelease { epoch: e } => Err(IoError::mismatch(format!(
                "released from barrier epoch {e} while waiting in {epoch}"
            ))),
            other => Err(unexpected("BARRIER_RELEASE", other)),
        }
    }

    /// Every member gets `root`'s payload. Non-root payloads are ignored.
    pub fn broadcast(&self, root: u32, payload: &[u8]) -> Result<Vec<u8>> {
        let payload = if self.rank() == root {
            payload.to_vec()
        } else {
            Vec::new()
        };
        match self.conn()?.get().call(&Frame::BcastSend { root, payload })? {
            Frame::BcastRecv { payload } => Ok(payload),
            other => Err(unexpected("BCAST_RECV", other)),
        }
    }

    /// Rank-ordered vector of every member's `value`.
    pub fn all_gather(&self, value: i64) -> Result<Vec<i64>> {
        match self.conn()?.get().call(&Frame::Gather { value })? {
            Frame::GatherResult { values } if values.len() == self.size() as usize => Ok(values),
            Frame::GatherResult { values } => Err(IoError::coordinator(format!(
                "gather returned {} values for a group of {}",
                values.len(),
                self.size()
            ))),
            other => Err(unexpected("GATHER_RESULT", other)),
        }
    }

    /// Atomically adds `delta` to a shared counter and returns its prior value.
    pub fn fetch_add(&self, counter: CounterId, delta: i64) -> Result<i64> {
        let frame = Frame::FetchAdd {
            file_id: counter.file_id,
            counter: counter.counter,
            delta,
        };
        match self.conn()?.get().call(&frame)? {
            Frame::FetchAddReply { old } => Ok(old),
            other => Err(unexpected("FETCH_ADD reply", other)),
        }
    }

    /// Blocks until `[start, end)` of `file_id` overlaps no granted range.
    pub fn range_lock(&self, file_id: u64, start: i64, end: i64) -> Result<LockToken> {
        if start < 0 || end <= start {
            return Err(IoError::bad_offset(format!(
                "invalid lock range [{start}, {end})"
            )));
        }
        let frame = Frame::Lock {
            file_id,
            start: start as u64,
            end: end as u64,
        };
        match self.conn()?.get().call(&frame)? {
            Frame::LockGrant { token } => Ok(LockToken(token)),
            other => Err(unexpected("LOCK_GRANT", other)),
        }
    }

    pub fn range_unlock(&self, token: LockToken) -> Result<()> {
        self.conn()?.get().send(&Frame::Unlock { token: token.0 })
    }

    /// Registers a collectively opened file; returns its group-wide id and
    /// a shared-pointer counter initialised to zero.
    pub(crate) fn register_file(&self, path: &str) -> Result<u64> {
        let frame = Frame::Open {
            path: path.as_bytes().to_vec(),
        };
        match self.conn()?.get().call(&frame)? {
            Frame::OpenAck { file_id } => Ok(file_id),
            other => Err(unexpected("OPEN_ACK", other)),
        }
    }

    pub(crate) fn release_file(&self, file_id: u64) -> Result<()> {
        self.conn()?.get().send(&Frame::Close { file_id })
    }

    /// Leaves the group. Further calls on this group or any clone fail with
    /// `HandleClosed`.
    pub fn finalize(&self) -> Result<()> {
        let mut guard = self.inner.conn.lock().unwrap_or_else(|p| p.into_inner());
        match guard.take() {
            Some(mut c) => c.send(&Frame::Finalize),
            None => Err(IoError::closed("group already finalized")),
        }
    }
}

struct ConnGuard<'a>(MutexGuard<'a, Option<Connection>>);

impl ConnGuard<'_> {
    fn get(&mut self) -> &mut Connection {
        self.0.as_mut().expect("checked in Group::conn")
    }
}
