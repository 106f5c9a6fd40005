//! Coordinator wire protocol.
//!
//! Every frame is `len: u32 LE | tag: u8 | payload`, where `len` counts the
//! tag byte plus the payload. All integers are little-endian.

use std::io::{self, Read, Write};

use crate::error::{ErrorClass, IoError};

pub const TAG_JOIN: u8 = 0x01;
pub const TAG_JOIN_ACK: u8 = 0x02;
pub const TAG_OPEN: u8 = 0x05;
pub const TAG_OPEN_ACK: u8 = 0x06;
pub const TAG_CLOSE: u8 = 0x07;
pub const TAG_BARRIER: u8 = 0x10;
pub const TAG_BARRIER_RELEASE: u8 = 0x11;
pub const TAG_BCAST_SEND: u8 = 0x20;
pub const TAG_BCAST_RECV: u8 = 0x21;
pub const TAG_GATHER: u8 = 0x30;
pub const TAG_GATHER_RESULT: u8 = 0x31;
pub const TAG_FETCH_ADD: u8 = 0x40;
pub const TAG_FETCH_ADD_REPLY: u8 = 0x41;
pub const TAG_LOCK: u8 = 0x50;
pub const TAG_LOCK_GRANT: u8 = 0x51;
pub const TAG_UNLOCK: u8 = 0x52;
pub const TAG_FINALIZE: u8 = 0x60;
pub const TAG_ERROR: u8 = 0x7F;

/// Upper bound on `len`; anything larger is treated as a corrupt stream.
pub const MAX_FRAME_LEN: u32 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Join { rank: u32 },
    JoinAck { size: u32 },
    Open { path: Vec<u8> },
    OpenAck { file_id: u64 },
    Close { file_id: u64 },
    Barrier { epoch: u64 },
    BarrierRelease { epoch: u64 },
    BcastSend { root: u32, payload: Vec<u8> },
    BcastRecv { payload: Vec<u8> },
    Gather { value: i64 },
    GatherResult { values: Vec<i64> },
    FetchAdd { file_id: u64, counter: u8, delta: i64 },
    FetchAddReply { old: i64 },
    Lock { file_id: u64, start: u64, end: u64 },
    LockGrant { token: u64 },
    Unlock { token: u64 },
    Finalize,
    Error { class: ErrorClass, message: String },
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("unknown tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("truncated payload for tag 0x{0:02x}")]
    Truncated(u8),
    #[error("{0} trailing bytes after tag 0x{1:02x}")]
    Trailing(usize, u8),
    #[error("inconsistent length field for tag 0x{0:02x}")]
    BadLength(u8),
    #[error("unknown error class {0}")]
    BadClass(u8),
    #[error("empty frame")]
    Empty,
    #[error("frame length {0} exceeds limit")]
    TooLarge(u32),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Frame {
    pub fn tag(&self) -> u8 {
        match self {
            Frame::Join { .. } => TAG_JOIN,
            Frame::JoinAck { .. } => TAG_JOIN_ACK,
            Frame::Open { .. } => TAG_OPEN,
            Frame::OpenAck { .. } => TAG_OPEN_ACK,
            Frame::Close { .. } => TAG_CLOSE,
            Frame::Barrier { .. } => TAG_BARRIER,
            Frame::BarrierRelease { .. } => TAG_BARRIER_RELEASE,
            Frame::BcastSend { .. } => TAG_BCAST_SEND,
            Frame::BcastRecv { .. } => TAG_BCAST_RECV,
            Frame::Gather { .. } => TAG_GATHER,
            Frame::GatherResult { .. } => TAG_GATHER_RESULT,
            Frame::FetchAdd { .. } => TAG_FETCH_ADD,
            Frame::FetchAddReply { .. } => TAG_FETCH_ADD_REPLY,
            Frame::Lock { .. } => TAG_LOCK,
            Frame::LockGrant { .. } => TAG_LOCK_GRANT,
            Frame::Unlock { .. } => TAG_UNLOCK,
            Frame::Finalize => TAG_FINALIZE,
            Frame::Error { .. } => TAG_ERROR,
        }
    }

    /// Full wire encoding including the length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![0u8; 4];
        out.push(self.tag());
        match self {
            Frame::Join { rank } => out.extend_from_slice(&rank.to_le_bytes()),
            Frame::JoinAck { size } => out.extend_from_slice(&size.to_le_bytes()),
            Frame::Open { path } => {
                out.extend_from_slice(&(path.len() as u32).to_le_bytes());
                out.extend_from_slice(path);
            }
            Frame::OpenAck { file_id } | Frame::Close { file_id } => {
                out.extend_from_slice(&file_id.to_le_bytes())
            }
            Frame::Barrier { epoch } | Frame::BarrierRelease { epoch } => {
                out.extend_from_slice(&epoch.to_le_bytes())
            }
            Frame::BcastSend { root, payload } => {
                out.extend_from_slice(&root.to_le_bytes());
                out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
                out.extend_from_slice(payload);
            }
            Frame::BcastRecv { payload } => {
                out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
                out.extend_from_slice(payload);
            }
            Frame::Gather { value } => out.extend_from_slice(&value.to_le_bytes()),
            Frame::GatherResult { values } => {
                out.extend_from_slice(&(values.len() as u32).to_le_bytes());
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Frame::FetchAdd {
                file_id,
                counter,
                delta,
            } => {
                out.extend_from_slice(&file_id.to_le_bytes());
                out.push(*counter);
                out.extend_from_slice(&delta.to_le_bytes());
            }
            Frame::FetchAddReply { old } => out.extend_from_slice(&old.to_le_bytes()),
            Frame::Lock {
                file_id,
                start,
                end,
            } => {
                out.extend_from_slice(&file_id.to_le_bytes());
                out.extend_from_slice(&start.to_le_bytes());
                out.extend_from_slice(&end.to_le_bytes());
            }
            Frame::LockGrant { token } | Frame::Unlock { token } => {
                out.extend_from_slice(&token.to_le_bytes())
            }
            Frame::Finalize => {}
            Frame::Error { class, message } => {
                out.push(class.code());
                out.extend_from_slice(&(message.len() as u32).to_le_bytes());
                out.extend_from_slice(message.as_bytes());
            }
        }
        let len = (out.len() - 4) as u32;
        out[..4].copy_from_slice(&len.to_le_bytes());
        out
    }

    /// Decodes a frame body (tag byte followed by payload, no length prefix).
    pub fn decode(body: &[u8]) -> Result<Frame, DecodeError> {
        let (&tag, payload) = body.split_first().ok_or(DecodeError::Empty)?;
        let mut cur = Cursor { buf: payload, tag };
        let frame = match tag {
            TAG_JOIN => Frame::Join { rank: cur.u32()? },
            TAG_JOIN_ACK => Frame::JoinAck { size: cur.u32()? },
            TAG_OPEN => {
                let n = cur.u32()? as usize;
                Frame::Open {
                    path: cur.take(n)?.to_vec(),
                }
            }
            TAG_OPEN_ACK => Frame::OpenAck {
                file_id: cur.u64()?,
            },
            TAG_CLOSE => Frame::Close {
                file_id: cur.u64()?,
            },
            TAG_BARRIER => Frame::Barrier { epoch: cur.u64()? },
            TAG_BARRIER_RELEASE => Frame::BarrierRelease { epoch: cur.u64()? },
            TAG_BCAST_SEND => {
                let root = cur.u32()?;
                let n = cur.u32()? as usize;
                Frame::BcastSend {
                    root,
                    payload: cur.take(n)?.to_vec(),
                }
            }
            TAG_BCAST_RECV => {
                let n = cur.u32()? as usize;
                Frame::BcastRecv {
                    payload: cur.take(n)?.to_vec(),
                }
            }
            TAG_GATHER => Frame::Gather { value: cur.i64()? },
            TAG_GATHER_RESULT => {
                let n = cur.u32()? as usize;
                if cur.buf.len() != n.checked_mul(8).ok_or(DecodeError::BadLength(tag))? {
                    return Err(DecodeError::BadLength(tag));
                }
                let values = (0..n).map(|_| cur.i64()).collect::<Result<_, _>>()?;
                Frame::GatherResult { values }
            }
            TAG_FETCH_ADD => Frame::FetchAdd {
                file_id: cur.u64()?,
                counter: cur.u8()?,
                delta: cur.i64()?,
            },
            TAG_FETCH_ADD_REPLY => Frame::FetchAddReply { old: cur.i64()? },
            TAG_LOCK => Frame::Lock {
                file_id: cur.u64()?,
                start: cur.u64()?,
                end: cur.u64()?,
            },
            TAG_LOCK_GRANT => Frame::LockGrant { token: cur.u64()? },
            TAG_UNLOCK => Frame::Unlock { token: cur.u64()? },
            TAG_FINALIZE => Frame::Finalize,
            TAG_ERROR => {
                let code = cur.u8()?;
                let class = ErrorClass::from_code(code).ok_or(DecodeError::BadClass(code))?;
                let n = cur.u32()? as usize;
                let message = String::from_utf8_lossy(cur.take(n)?).into_owned();
                Frame::Error { class, message }
            }
            other => return Err(DecodeError::UnknownTag(other)),
        };
        if !cur.buf.is_empty() {
            return Err(DecodeError::Trailing(cur.buf.len(), tag));
        }
        Ok(frame)
    }

    pub fn error(err: &IoError) -> Frame {
        Frame::Error {
            class: err.class,
            message: err.detail.clone(),
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    tag: u8,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::Truncated(self.tag));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream at a frame
/// boundary.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, DecodeError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len);
    if len == 0 {
        return Err(DecodeError::Empty);
    }
    if len > MAX_FRAME_LEN {
        return Err(DecodeError::TooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Frame::decode(&body).map(Some)
}
