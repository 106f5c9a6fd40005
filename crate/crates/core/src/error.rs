use std::fmt;

/// The class of a library failure. Every [`IoError`] carries exactly one.
///
/// The numeric codes are what travels in an `ERROR` frame on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorClass {
    NoSuchFile = 0,
    AccessModeViolation = 1,
    BadOffset = 2,
    UnsupportedView = 3,
    PendingSplitCollective = 4,
    HandleClosed = 5,
    GroupMismatch = 6,
    CoordinatorFailure = 7,
    BackendFailure = 8,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 9] = [
        ErrorClass::NoSuchFile,
        ErrorClass::AccessModeViolation,
        ErrorClass::BadOffset,
        ErrorClass::UnsupportedView,
        ErrorClass::PendingSplitCollective,
        ErrorClass::HandleClosed,
        ErrorClass::GroupMismatch,
        ErrorClass::CoordinatorFailure,
        ErrorClass::BackendFailure,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ErrorClass::NoSuchFile => "no such file",
            ErrorClass::AccessModeViolation => "access mode violation",
            ErrorClass::BadOffset => "bad offset",
            ErrorClass::UnsupportedView => "unsupported view",
            ErrorClass::PendingSplitCollective => "pending split collective",
            ErrorClass::HandleClosed => "handle closed",
            ErrorClass::GroupMismatch => "group mismatch",
            ErrorClass::CoordinatorFailure => "coordinator failure",
            ErrorClass::BackendFailure => "backend failure",
        };
        f.pad(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{class}: {detail}")]
pub struct IoError {
    pub class: ErrorClass,
    pub detail: String,
}

impl IoError {
    pub fn new(class: ErrorClass, detail: impl Into<String>) -> Self {
        IoError {
            class,
            detail: detail.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        self.class
    }

    pub(crate) fn no_such_file(detail: impl Into<String>) -> Self {
        Self::new(ErrorClass::NoSuchFile, detail)
    }

    pub(crate) fn access(detail: impl Into<String>) -> Self {
        Self::new(ErrorClass::AccessModeViolation, detail)
    }

    pub(crate) fn bad_offset(detail: impl Into<String>) -> Self {
        Self::new(ErrorClass::BadOffset, detail)
    }

    pub(crate) fn unsupported_view(detail: impl Into<String>) -> Self {
        Self::new(ErrorClass::UnsupportedView, detail)
    }

    pub(crate) fn pending_split(detail: impl Into<String>) -> Self {
        Self::new(ErrorClass::PendingSplitCollective, detail)
    }

    pub(crate) fn closed(detail: impl Into<String>) -> Self {
        Self::new(ErrorClass::HandleClosed, detail)
    }

    pub(crate) fn mismatch(detail: impl Into<String>) -> Self {
        Self::new(ErrorClass::GroupMismatch, detail)
    }

    pub(crate) fn coordinator(detail: impl Into<String>) -> Self {
        Self::new(ErrorClass::CoordinatorFailure, detail)
    }

    pub(crate) fn backend(detail: impl Into<String>) -> Self {
        Self::new(ErrorClass::BackendFailure, detail)
    }
}

pub type Result<T> = std::result::Result<T, IoError>;
