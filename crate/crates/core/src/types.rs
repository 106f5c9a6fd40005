//! Shared vocabulary: offsets, element types, access modes, statuses and hints.

use std::collections::BTreeMap;
use std::fmt;

use bitflags::bitflags;
use bytemuck::Pod;

use crate::error::{IoError, Result};

/// A file offset. Depending on position this is counted in etype elements
/// (view-relative positions) or in bytes (displacements, file sizes).
pub type Offset = i64;

/// Elementary data type of a view or a transfer buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementType {
    Byte,
    Int32,
    Int64,
    Float32,
    Float64,
}

impl ElementType {
    pub const ALL: [ElementType; 5] = [
        ElementType::Byte,
        ElementType::Int32,
        ElementType::Int64,
        ElementType::Float32,
        ElementType::Float64,
    ];

    /// Bytes per element.
    pub const fn extent(self) -> usize {
        match self {
            ElementType::Byte => 1,
            ElementType::Int32 | ElementType::Float32 => 4,
            ElementType::Int64 | ElementType::Float64 => 8,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ElementType::Byte => 0,
            ElementType::Int32 => 1,
            ElementType::Int64 => 2,
            ElementType::Float32 => 3,
            ElementType::Float64 => 4,
        }
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ElementType::Byte => "BYTE",
            ElementType::Int32 => "INT32",
            ElementType::Int64 => "INT64",
            ElementType::Float32 => "FLOAT32",
            ElementType::Float64 => "FLOAT64",
        };
        f.pad(name)
    }
}

/// Rust types that can be moved through a file as etype elements.
///
/// Elements are stored in host byte order ("native" representation).
pub trait Element: Pod + Default + Send + 'static {
    const KIND: ElementType;
}

impl Element for u8 {
    const KIND: ElementType = ElementType::Byte;
}
impl Element for i32 {
    const KIND: ElementType = ElementType::Int32;
}
impl Element for i64 {
    const KIND: ElementType = ElementType::Int64;
}
impl Element for f32 {
    const KIND: ElementType = ElementType::Float32;
}
impl Element for f64 {
    const KIND: ElementType = ElementType::Float64;
}

bitflags! {
    /// File access mode supplied at open.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
    pub struct AccessMode: u32 {
        const RDONLY = 1 << 0;
        const WRONLY = 1 << 1;
        const RDWR = 1 << 2;
        const CREATE = 1 << 3;
        const EXCL = 1 << 4;
        const APPEND = 1 << 5;
        const DELETE_ON_CLOSE = 1 << 6;
    }
}

impl AccessMode {
    /// Checks that exactly one base mode is present and that a read-only
    /// mode does not also ask for creation.
    pub fn validate(self) -> Result<()> {
        let base = self & (AccessMode::RDONLY | AccessMode::WRONLY | AccessMode::RDWR);
        if base.bits().count_ones() != 1 {
            return Err(IoError::access(format!(
                "exactly one of RDONLY, WRONLY, RDWR required, got {self:?}"
            )));
        }
        if self.contains(AccessMode::RDONLY)
            && self.intersects(AccessMode::CREATE | AccessMode::EXCL)
        {
            return Err(IoError::access("RDONLY cannot be combined with CREATE or EXCL"));
        }
        Ok(())
    }

    pub fn can_read(self) -> bool {
        self.intersects(AccessMode::RDONLY | AccessMode::RDWR)
    }

    pub fn can_write(self) -> bool {
        self.intersects(AccessMode::WRONLY | AccessMode::RDWR)
    }
}

/// Result of a data-access operation: the number of etype elements moved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TransferStatus {
    pub count: usize,
}

impl TransferStatus {
    pub fn new(count: usize) -> Self {
        TransferStatus { count }
    }
}

/// Key/value hints attached to an open file. Stored and returned, never
/// interpreted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InfoHints {
    entries: BTreeMap<String, String>,
}

impl InfoHints {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Overlays `other` onto `self`; keys present in both take `other`'s value.
    pub fn merge(&mut self, other: &InfoHints) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for InfoHints {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        let mut hints = InfoHints::new();
        for (k, v) in iter {
            hints.set(k, v);
        }
        hints
    }
}

/// Reference point for seek operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Whence {
    Set,
    Cur,
    End,
}

impl Whence {
    pub(crate) fn code(self) -> u8 {
        match self {
            Whence::Set => 0,
            Whence::Cur => 1,
            Whence::End => 2,
        }
    }
}

/// Stable 64-bit FNV-1a digest used to compare collective arguments across
/// processes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ArgDigest(u64);

impl ArgDigest {
    pub fn new(op: &str) -> Self {
        let mut d = ArgDigest(0xcbf2_9ce4_8422_2325);
        d.bytes(op.as_bytes());
        d
    }

    pub fn bytes(&mut self, data: &[u8]) -> &mut Self {
        for &b in data {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
        // length separator so ("ab","c") and ("a","bc") differ
        for b in (data.len() as u64).to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
        self
    }

    pub fn int(&mut self, v: i64) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn value(&self) -> i64 {
        self.0 as i64
    }
}
