//! Rendezvous service shared by all members of a group.
//!
//! One thread per member connection. All mutable state sits behind a single
//! mutex; collective rounds, lock waits and join waits park on one condvar.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};

use super::protocol::{read_frame, write_frame, Frame};
use crate::error::{ErrorClass, IoError};

/// Something the coordinator did, in the order it happened.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Joined { rank: u32 },
    Opened { file_id: u64, path: String },
    Closed { file_id: u64 },
    LockGranted { token: u64, rank: u32, file_id: u64, start: u64, end: u64 },
    LockReleased { token: u64, rank: u32 },
    LockLeaked { token: u64, rank: u32, file_id: u64, start: u64, end: u64 },
    Finalized { rank: u32 },
    Disconnected { rank: u32 },
}

/// Summary returned once the coordinator stops.
#[derive(Debug, Clone, Default)]
pub struct CoordinatorReport {
    pub events: Vec<Event>,
    /// True when every member joined and finalized.
    pub clean: bool,
}

impl CoordinatorReport {
    pub fn opens(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::Opened { .. }))
            .count()
    }

    pub fn closes(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::Closed { .. }))
            .count()
    }

    pub fn leaked_locks(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::LockLeaked { .. }))
            .count()
    }
}

#[derive(Debug, Clone)]
enum Contribution {
    Barrier(u64),
    Bcast { root: u32, payload: Vec<u8> },
    Gather(i64),
}

struct Round {
    contributions: Vec<Option<Contribution>>,
    arrived: u32,
    replies: Option<Vec<Frame>>,
    picked: u32,
}

#[derive(Debug, Clone)]
struct Grant {
    token: u64,
    rank: u32,
    file_id: u64,
    start: u64,
    end: u64,
}

#[derive(Default)]
struct Member {
    joined: bool,
    departed: bool,
    next_round: u64,
}

struct State {
    size: u32,
    members: Vec<Member>,
    joined: u32,
    departed: u32,
    finalized: u32,
    broken: Option<String>,
    rounds: BTreeMap<u64, Round>,
    counters: HashMap<(u64, u8), i64>,
    next_file_id: u64,
    grants: Vec<Grant>,
    next_token: u64,
    events: Vec<Event>,
}

struct Shared {
    state: Mutex<State>,
    cond: Condvar,
    stop: AtomicBool,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn done(&self) -> bool {
        let st = self.lock();
        st.departed == st.size || st.broken.is_some() && st.departed == st.joined
    }
}

pub struct Coordinator {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl Coordinator {
    pub fn bind<A: ToSocketAddrs>(addr: A, size: u32) -> io::Result<Coordinator> {
        if size == 0 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "group size must be at least 1",
            ));
        }
        let listener = TcpListener::bind(addr)?;
        let members = (0..size).map(|_| Member::default()).collect();
        let state = State {
            size,
            members,
            joined: 0,
            departed: 0,
            finalized: 0,
            broken: None,
            rounds: BTreeMap::new(),
            counters: HashMap::new(),
            next_file_id: 1,
            grants: Vec::new(),
            next_token: 1,
            events: Vec::new(),
        };
        Ok(Coordinator {
            listener,
            shared: Arc::new(Shared {
                state: Mutex::new(state),
                cond: Condvar::new(),
                stop: AtomicBool::new(false),
            }),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Starts serving on a background thread.
    pub fn spawn(self) -> io::Result<CoordinatorHandle> {
        let addr = self.local_addr();
        self.listener.set_nonblocking(true)?;
        let shared = Arc::clone(&self.shared);
        let listener = self.listener;
        let thread = thread::Builder::new()
            .name("pario-coordinator".into())
            .spawn(move || accept_loop(listener, shared))?;
        Ok(CoordinatorHandle {
            addr,
            shared: self.shared,
            thread: Some(thread),
        })
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut workers = Vec::new();
    loop {
        if shared.stop.load(Ordering::SeqCst) || shared.done() {
            break;
        }
        match listener.accept() {
            Ok((stream, peer)) => {
                debug!("coordinator: connection from {peer}");
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                let shared = Arc::clone(&shared);
                workers.push(thread::spawn(move || serve_member(stream, shared)));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(2));
            }
            Err(e) => {
                warn!("coordinator: accept failed: {e}");
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
    if shared.stop.load(Ordering::SeqCst) {
        return;
    }
    for w in workers {
        let _ = w.join();
    }
}

pub struct CoordinatorHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<()>>,
}

impl CoordinatorHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// `host:port` string suitable for `PARIO_COORD`.
    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    pub fn events(&self) -> Vec<Event> {
        self.shared.lock().events.clone()
    }

    /// Blocks until every member has finalized or disconnected.
    pub fn wait(mut self) -> CoordinatorReport {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        self.report()
    }

    /// Waits up to `timeout` for the members to leave, then stops serving
    /// regardless and reports what happened.
    pub fn finish(mut self, timeout: Duration) -> CoordinatorReport {
        let deadline = std::time::Instant::now() + timeout;
        while !self.shared.done() && std::time::Instant::now() < deadline {
            thread::sleep(Duration::from_millis(5));
        }
        if !self.shared.done() {
            self.abort("coordinator shut down");
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        self.report()
    }

    /// Marks the group failed. Members blocked in a collective, a lock
    /// wait or the join get `CoordinatorFailure`; the accept loop stops.
    pub fn abort(&self, why: &str) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let mut st = self.shared.lock();
        if st.broken.is_none() {
            st.broken = Some(why.to_string());
        }
        self.shared.cond.notify_all();
    }

    fn report(&self) -> CoordinatorReport {
        let st = self.shared.lock();
        CoordinatorReport {
            events: st.events.clone(),
            clean: st.finalized == st.size && st.broken.is_none(),
        }
    }
}

impl Drop for CoordinatorHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.abort("coordinator dropped");
        }
    }
}

fn serve_member(stream: TcpStream, shared: Arc<Shared>) {
    let mut reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(e) => {
            warn!("coordinator: cannot clone stream: {e}");
            return;
        }
    });
    let mut writer = BufWriter::new(stream);

    let rank = match read_frame(&mut reader) {
        Ok(Some(Frame::Join { rank })) => rank,
        Ok(Some(other)) => {
            let _ = write_frame(
                &mut writer,
                &Frame::error(&IoError::coordinator(format!(
                    "expected JOIN, got tag 0x{:02x}",
                    other.tag()
                ))),
            );
            return;
        }
        Ok(None) => return,
        Err(e) => {
            warn!("coordinator: bad first frame: {e}");
            return;
        }
    };

    let (reply, registered) = join(&shared, rank);
    let joined = matches!(reply, Frame::JoinAck { .. });
    if write_frame(&mut writer, &reply).is_err() || !joined {
        if registered {
            depart(&shared, rank, false);
        }
        return;
    }

    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => {
                depart(&shared, rank, false);
                return;
            }
            Err(e) => {
                warn!("coordinator: rank {rank} stream error: {e}");
                depart(&shared, rank, false);
                return;
            }
        };
        let reply = match frame {
            Frame::Barrier { epoch } => Some(contribute(&shared, rank, Contribution::Barrier(epoch))),
            Frame::BcastSend { root, payload } => {
                Some(contribute(&shared, rank, Contribution::Bcast { root, payload }))
            }
            Frame::Gather { value } => Some(contribute(&shared, rank, Contribution::Gather(value))),
            Frame::FetchAdd {
                file_id,
                counter,
                delta,
            } => {
                let mut st = shared.lock();
                let v = st.counters.entry((file_id, counter)).or_insert(0);
                let old = *v;
                *v = v.wrapping_add(delta);
                Some(Frame::FetchAddReply { old })
            }
            Frame::Lock {
                file_id,
                start,
                end,
            } => Some(acquire(&shared, rank, file_id, start, end)),
            Frame::Unlock { token } => {
                release(&shared, rank, token);
                None
            }
            Frame::Open { path } => {
                let mut st = shared.lock();
                let file_id = st.next_file_id;
                st.next_file_id += 1;
                st.counters.insert((file_id, 0), 0);
                let path = String::from_utf8_lossy(&path).into_owned();
                st.events.push(Event::Opened { file_id, path });
                Some(Frame::OpenAck { file_id })
            }
            Frame::Close { file_id } => {
                let mut st = shared.lock();
                st.counters.retain(|&(id, _), _| id != file_id);
                st.events.push(Event::Closed { file_id });
                None
            }
            Frame::Finalize => {
                depart(&shared, rank, true);
                return;
            }
            other => Some(Frame::error(&IoError::coordinator(format!(
                "unexpected tag 0x{:02x} from rank {rank}",
                other.tag()
            )))),
        };
        if let Some(reply) = reply {
            if let Err(e) = write_frame(&mut writer, &reply) {
                warn!("coordinator: write to rank {rank} failed: {e}");
                depart(&shared, rank, false);
                return;
            }
        }
    }
}

/// Returns the reply and whether this connection was registered as `rank`.
fn join(shared: &Shared, rank: u32) -> (Frame, bool) {
    let mut st = shared.lock();
    if rank >= st.size {
        return (
            Frame::error(&IoError::coordinator(format!(
                "rank {rank} out of range for group of {}",
                st.size
            ))),
            false,
        );
    }
    if st.members[rank as usize].joined {
        // a misconfigured launch; nobody waiting on this group can proceed
        let why = format!("duplicate rank {rank}");
        if st.broken.is_none() {
            st.broken = Some(why.clone());
        }
        shared.cond.notify_all();
        return (Frame::error(&IoError::coordinator(why)), false);
    }
    st.members[rank as usize].joined = true;
    st.joined += 1;
    st.events.push(Event::Joined { rank });
    shared.cond.notify_all();
    while st.joined < st.size && st.broken.is_none() {
        st = shared.cond.wait(st).unwrap_or_else(|p| p.into_inner());
    }
    let reply = match &st.broken {
        Some(why) => Frame::error(&IoError::coordinator(why.clone())),
        None => Frame::JoinAck { size: st.size },
    };
    (reply, true)
}

fn depart(shared: &Shared, rank: u32, finalized: bool) {
    let mut st = shared.lock();
    let member = &mut st.members[rank as usize];
    if member.departed {
        return;
    }
    member.departed = true;
    st.departed += 1;
    let (leaked, kept): (Vec<Grant>, Vec<Grant>) =
        st.grants.drain(..).partition(|g| g.rank == rank);
    st.grants = kept;
    for g in leaked {
        warn!(
            "coordinator: rank {rank} left holding lock {} on file {} [{}, {})",
            g.token, g.file_id, g.start, g.end
        );
        st.events.push(Event::LockLeaked {
            token: g.token,
            rank,
            file_id: g.file_id,
            start: g.start,
            end: g.end,
        });
    }
    if finalized {
        st.finalized += 1;
        st.events.push(Event::Finalized { rank });
    } else {
        st.events.push(Event::Disconnected { rank });
        if st.broken.is_none() {
            st.broken = Some(format!("rank {rank} disconnected without finalizing"));
        }
    }
    shared.cond.notify_all();
}

fn contribute(shared: &Shared, rank: u32, contribution: Contribution) -> Frame {
    let mut st = shared.lock();
    if let Some(why) = &st.broken {
        return Frame::error(&IoError::coordinator(why.clone()));
    }
    let size = st.size;
    let seq = st.members[rank as usize].next_round;
    st.members[rank as usize].next_round += 1;
    let round = st.rounds.entry(seq).or_insert_with(|| Round {
        contributions: vec![None; size as usize],
        arrived: 0,
        replies: None,
        picked: 0,
    });
    round.contributions[rank as usize] = Some(contribution);
    round.arrived += 1;
    if round.arrived == size {
        round.replies = Some(resolve(&round.contributions));
        shared.cond.notify_all();
    }
    loop {
        if let Some(replies) = st.rounds.get(&seq).and_then(|r| r.replies.as_ref()) {
            let reply = replies[rank as usize].clone();
            let round = st.rounds.get_mut(&seq).unwrap();
            round.picked += 1;
            if round.picked == size {
                st.rounds.remove(&seq);
            }
            return reply;
        }
        if let Some(why) = &st.broken {
            return Frame::error(&IoError::coordinator(why.clone()));
        }
        let round = &st.rounds[&seq];
        if let Some(gone) = (0..size as usize)
            .find(|&i| round.contributions[i].is_none() && st.members[i].departed)
        {
            return Frame::error(&IoError::coordinator(format!(
                "rank {gone} left the group before joining collective {seq}"
            )));
        }
        st = shared.cond.wait(st).unwrap_or_else(|p| p.into_inner());
    }
}

fn resolve(contributions: &[Option<Contribution>]) -> Vec<Frame> {
    let all: Vec<&Contribution> = contributions.iter().map(|c| c.as_ref().unwrap()).collect();
    let n = all.len();
    let mismatch = |why: String| vec![Frame::error(&IoError::mismatch(why)); n];
    match all[0] {
        Contribution::Barrier(epoch) => {
            if all
                .iter()
                .all(|c| matches!(c, Contribution::Barrier(e) if e == epoch))
            {
                vec![Frame::BarrierRelease { epoch: *epoch }; n]
            } else {
                mismatch(format!("barrier epochs or collective kinds disagree: {all:?}"))
            }
        }
        Contribution::Bcast { root, .. } => {
            let root = *root;
            let agreed = all
                .iter()
                .all(|c| matches!(c, Contribution::Bcast { root: r, .. } if *r == root));
            if !agreed {
                return mismatch("broadcast roots or collective kinds disagree".into());
            }
            if root as usize >= n {
                return mismatch(format!("broadcast root {root} outside group of {n}"));
            }
            let payload = match all[root as usize] {
                Contribution::Bcast { payload, .. } => payload.clone(),
                _ => unreachable!(),
            };
            vec![Frame::BcastRecv { payload }; n]
        }
        Contribution::Gather(_) => {
            let values: Option<Vec<i64>> = all
                .iter()
                .map(|c| match c {
                    Contribution::Gather(v) => Some(*v),
                    _ => None,
                })
                .collect();
            match values {
                Some(values) => vec![Frame::GatherResult { values }; n],
                None => mismatch("collective kinds disagree in gather".into()),
            }
        }
    }
}

fn acquire(shared: &Shared, rank: u32, file_id: u64, start: u64, end: u64) -> Frame {
    if start >= end {
        return Frame::error(&IoError::new(
            ErrorClass::BadOffset,
            format!("empty lock range [{start}, {end})"),
        ));
    }
    let mut st = shared.lock();
    loop {
        if let Some(why) = &st.broken {
            return Frame::error(&IoError::coordinator(why.clone()));
        }
        let blocked = st
            .grants
            .iter()
            .any(|g| g.file_id == file_id && g.start < end && start < g.end);
        if !blocked {
            break;
        }
        st = shared.cond.wait(st).unwrap_or_else(|p| p.into_inner());
    }
    let token = st.next_token;
    st.next_token += 1;
    st.grants.push(Grant {
        token,
        rank,
        file_id,
        start,
        end,
    });
    st.events.push(Event::LockGranted {
        token,
        rank,
        file_id,
        start,
        end,
    });
    Frame::LockGrant { token }
}

fn release(shared: &Shared, rank: u32, token: u64) {
    let mut st = shared.lock();
    match st.grants.iter().position(|g| g.token == token) {
        Some(i) => {
            st.grants.swap_remove(i);
            st.events.push(Event::LockReleased { token, rank });
            shared.cond.notify_all();
        }
        None => warn!("coordinator: rank {rank} released unknown lock token {token}"),
    }
}
