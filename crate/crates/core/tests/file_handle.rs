use std::fs;
use std::path::Path;

use pario::local::run_local;
use pario::{AccessMode, ElementType, ErrorClass, FileHandle, FileView, InfoHints, Strategy};

fn rw_create() -> AccessMode {
    AccessMode::RDWR | AccessMode::CREATE
}

fn no_info() -> InfoHints {
    InfoHints::new()
}

#[test]
fn open_on_two_ranks_shares_one_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("workfile");
    let (ids, report) = run_local(2, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        assert_eq!(fh.get_view().unwrap(), FileView::default());
        assert_eq!(fh.get_position().unwrap(), 0);
        assert_eq!(fh.get_position_shared().unwrap(), 0);
        assert!(!fh.get_atomicity().unwrap());
        let id = fh.file_id();
        fh.close().unwrap();
        id
    })
    .unwrap();
    assert_eq!(ids[0], ids[1]);
    assert!(path.exists());
    assert_eq!(report.opens(), 1);
    assert_eq!(report.closes(), 1);
}

#[test]
fn missing_file_is_no_such_file_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing");
    let (out, _) = run_local(3, |g| {
        FileHandle::open(&g, &path, AccessMode::RDONLY, &no_info())
            .unwrap_err()
            .class
    })
    .unwrap();
    assert_eq!(out, vec![ErrorClass::NoSuchFile; 3]);
}

#[test]
fn invalid_amode_rejected_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    for amode in [
        AccessMode::CREATE,
        AccessMode::RDONLY | AccessMode::WRONLY,
        AccessMode::RDONLY | AccessMode::CREATE,
        AccessMode::RDONLY | AccessMode::EXCL,
    ] {
        let (out, _) = run_local(2, |g| {
            FileHandle::open(&g, &path, amode, &no_info()).unwrap_err().class
        })
        .unwrap();
        assert_eq!(out, vec![ErrorClass::AccessModeViolation; 2], "{amode:?}");
    }
}

#[test]
fn amode_disagreement_is_group_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    let (out, _) = run_local(2, |g| {
        let amode = if g.rank() == 0 {
            rw_create()
        } else {
            AccessMode::WRONLY | AccessMode::CREATE
        };
        FileHandle::open(&g, &path, amode, &no_info()).unwrap_err().class
    })
    .unwrap();
    assert_eq!(out, vec![ErrorClass::GroupMismatch; 2]);
    assert!(!path.exists());
}

#[test]
fn filename_disagreement_is_group_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = run_local(2, |g| {
        let path = dir.path().join(format!("f{}", g.rank()));
        FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap_err().class
    })
    .unwrap();
    assert_eq!(out, vec![ErrorClass::GroupMismatch; 2]);
}

#[test]
fn excl_on_existing_file_fails_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    fs::write(&path, b"x").unwrap();
    let (out, _) = run_local(2, |g| {
        FileHandle::open(&g, &path, rw_create() | AccessMode::EXCL, &no_info())
            .unwrap_err()
            .class
    })
    .unwrap();
    assert_eq!(out[0], out[1]);
}

#[test]
fn operations_after_close_are_handle_closed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    run_local(2, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        fh.close().unwrap();
        let mut buf = [0u8; 4];
        let closed = ErrorClass::HandleClosed;
        assert_eq!(fh.read_at(0, &mut buf, 0, 4).unwrap_err().class, closed);
        assert_eq!(fh.write_at(0, &buf, 0, 4).unwrap_err().class, closed);
        assert_eq!(fh.get_view().unwrap_err().class, closed);
        assert_eq!(fh.get_size().unwrap_err().class, closed);
        assert_eq!(fh.get_info().unwrap_err().class, closed);
        assert_eq!(fh.get_position().unwrap_err().class, closed);
        assert_eq!(fh.sync().unwrap_err().class, closed);
        assert_eq!(fh.close().unwrap_err().class, closed);
    })
    .unwrap();
}

#[test]
fn close_with_pending_split_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    run_local(2, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        fh.write_at_all_begin(g.rank() as i64 * 4, vec![1u8; 4], 0, 4)
            .unwrap();
        assert_eq!(
            fh.close().unwrap_err().class,
            ErrorClass::PendingSplitCollective
        );
        fh.write_at_all_end::<u8>().unwrap();
        fh.close().unwrap();
    })
    .unwrap();
    assert_eq!(fs::read(&path).unwrap(), vec![1u8; 8]);
}

#[test]
fn delete_on_close_removes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scratch");
    let (exists_after, _) = run_local(2, |g| {
        let amode = rw_create() | AccessMode::DELETE_ON_CLOSE;
        let mut fh = FileHandle::open(&g, &path, amode, &no_info()).unwrap();
        fh.write_at(g.rank() as i64, &[7u8], 0, 1).unwrap();
        fh.close().unwrap();
        path.exists()
    })
    .unwrap();
    assert_eq!(exists_after, vec![false, false]);
}

#[test]
fn delete_existing_and_missing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    fs::write(&path, b"abc").unwrap();
    FileHandle::delete(&path, &no_info()).unwrap();
    assert!(!path.exists());
    assert_eq!(
        FileHandle::delete(&path, &no_info()).unwrap_err().class,
        ErrorClass::NoSuchFile
    );
}

#[test]
fn create_close_delete_then_open_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    run_local(2, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        fh.close().unwrap();
        if g.rank() == 0 {
            FileHandle::delete(&path, &no_info()).unwrap();
        }
        g.barrier().unwrap();
        let err = FileHandle::open(&g, &path, AccessMode::RDONLY, &no_info()).unwrap_err();
        assert_eq!(err.class, ErrorClass::NoSuchFile);
    })
    .unwrap();
}

#[test]
fn set_size_truncates_and_extends() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    run_local(2, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        fh.set_size(0).unwrap();
        assert_eq!(fh.get_size().unwrap(), 0);

        if g.rank() == 0 {
            fh.write_at(0, &[9u8; 40], 0, 40).unwrap();
        }
        g.barrier().unwrap();
        fh.set_size(16).unwrap();
        assert_eq!(fh.get_size().unwrap(), 16);

        fh.set_size(32).unwrap();
        assert_eq!(fh.get_size().unwrap(), 32);
        let mut buf = [1u8; 32];
        assert_eq!(fh.read_at(0, &mut buf, 0, 32).unwrap().count, 32);
        assert_eq!(&buf[..16], &[9u8; 16]);
        assert_eq!(&buf[16..], &[0u8; 16]);

        assert_eq!(fh.set_size(-1).unwrap_err().class, ErrorClass::BadOffset);
        fh.close().unwrap();
    })
    .unwrap();
}

#[test]
fn set_size_disagreement_is_group_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    run_local(2, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        let err = fh.set_size(10 + g.rank() as i64).unwrap_err();
        assert_eq!(err.class, ErrorClass::GroupMismatch);
        assert_eq!(fh.get_size().unwrap(), 0);
        fh.close().unwrap();
    })
    .unwrap();
}

#[test]
fn preallocate_only_grows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    run_local(2, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        fh.preallocate(100).unwrap();
        assert_eq!(fh.get_size().unwrap(), 100);
        fh.preallocate(10).unwrap();
        assert_eq!(fh.get_size().unwrap(), 100);
        fh.close().unwrap();
    })
    .unwrap();
    assert_eq!(fs::read(&path).unwrap(), vec![0u8; 100]);
}

#[test]
fn resize_requires_write_access() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    fs::write(&path, [0u8; 8]).unwrap();
    run_local(2, |g| {
        let mut fh = FileHandle::open(&g, &path, AccessMode::RDONLY, &no_info()).unwrap();
        let violation = ErrorClass::AccessModeViolation;
        assert_eq!(fh.set_size(4).unwrap_err().class, violation);
        assert_eq!(fh.preallocate(64).unwrap_err().class, violation);
        assert_eq!(fh.get_size().unwrap(), 8);
        fh.close().unwrap();
    })
    .unwrap();
}

#[test]
fn info_hints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    run_local(2, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        assert!(fh.get_info().unwrap().is_empty());

        let mut hints = InfoHints::new();
        hints.set("access_style", "sequential");
        hints.set("x_unknown_key", "kept verbatim");
        fh.set_info(&hints).unwrap();
        let got = fh.get_info().unwrap();
        assert_eq!(got.get("access_style"), Some("sequential"));
        assert_eq!(got.get("x_unknown_key"), Some("kept verbatim"));

        let mut again = InfoHints::new();
        again.set("access_style", "random");
        fh.set_info(&again).unwrap();
        let got = fh.get_info().unwrap();
        assert_eq!(got.get("access_style"), Some("random"));
        assert_eq!(got.len(), 2);
        fh.close().unwrap();
    })
    .unwrap();
}

#[test]
fn open_info_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    let info: InfoHints = [("striping_unit", "65536")].into_iter().collect();
    run_local(1, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &info).unwrap();
        assert_eq!(fh.get_info().unwrap().get("striping_unit"), Some("65536"));
        fh.close().unwrap();
    })
    .unwrap();
}

#[test]
fn view_set_and_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    run_local(2, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        fh.set_view(0, ElementType::Int32, ElementType::Int32, "native", &no_info())
            .unwrap();
        assert_eq!(fh.get_byte_offset(10).unwrap(), 40);

        fh.set_view(4, ElementType::Int32, ElementType::Int32, "native", &no_info())
            .unwrap();
        let v = fh.get_view().unwrap();
        assert_eq!(v, FileView::new(4, ElementType::Int32));
        assert_eq!(v.filetype, ElementType::Int32);
        assert_eq!(v.datarep, "native");

        fh.set_view(8, ElementType::Int64, ElementType::Int64, "native", &no_info())
            .unwrap();
        assert_eq!(fh.get_byte_offset(0).unwrap(), 8);

        fh.set_view(8, ElementType::Float64, ElementType::Float64, "native", &no_info())
            .unwrap();
        assert_eq!(fh.get_byte_offset(3).unwrap(), 32);
        fh.close().unwrap();
        assert_eq!(fh.get_view().unwrap_err().class, ErrorClass::HandleClosed);
    })
    .unwrap();
}

#[test]
fn unsupported_views_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    run_local(2, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        let unsupported = ErrorClass::UnsupportedView;
        let err = fh
            .set_view(0, ElementType::Int32, ElementType::Float64, "native", &no_info())
            .unwrap_err();
        assert_eq!(err.class, unsupported);
        let err = fh
            .set_view(0, ElementType::Int32, ElementType::Int32, "external32", &no_info())
            .unwrap_err();
        assert_eq!(err.class, unsupported);
        let err = fh
            .set_view(-8, ElementType::Int32, ElementType::Int32, "native", &no_info())
            .unwrap_err();
        assert_eq!(err.class, ErrorClass::BadOffset);
        assert_eq!(fh.get_view().unwrap(), FileView::default());
        fh.close().unwrap();
    })
    .unwrap();
}

#[test]
fn set_view_resets_pointers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    run_local(2, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        fh.write(&[1u8; 12], 0, 12).unwrap();
        fh.write_shared(&[2u8; 5], 0, 5).unwrap();
        g.barrier().unwrap();
        assert_eq!(fh.get_position().unwrap(), 12);
        assert_eq!(fh.get_position_shared().unwrap(), 10);
        fh.set_view(0, ElementType::Int32, ElementType::Int32, "native", &no_info())
            .unwrap();
        assert_eq!(fh.get_position().unwrap(), 0);
        assert_eq!(fh.get_position_shared().unwrap(), 0);
        fh.close().unwrap();
    })
    .unwrap();
}

#[test]
fn per_rank_displacement_is_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    run_local(3, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        let disp = g.rank() as i64 * 16;
        fh.set_view(disp, ElementType::Int32, ElementType::Int32, "native", &no_info())
            .unwrap();
        fh.write(&[g.rank() as i32; 4], 0, 4).unwrap();
        fh.close().unwrap();
    })
    .unwrap();
    let bytes = fs::read(&path).unwrap();
    let ints: Vec<i32> = bytes
        .chunks(4)
        .map(|c| i32::from_ne_bytes(c.try_into().unwrap()))
        .collect();
    assert_eq!(ints, [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
}

#[test]
fn etype_disagreement_is_group_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    run_local(2, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        let e = if g.rank() == 0 {
            ElementType::Int32
        } else {
            ElementType::Float32
        };
        let err = fh.set_view(0, e, e, "native", &no_info()).unwrap_err();
        assert_eq!(err.class, ErrorClass::GroupMismatch);
        fh.close().unwrap();
    })
    .unwrap();
}

#[test]
fn atomicity_flag() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    run_local(3, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        assert!(!fh.get_atomicity().unwrap());
        fh.set_atomicity(true).unwrap();
        assert!(fh.get_atomicity().unwrap());

        let err = fh.set_atomicity(g.rank() == 0).unwrap_err();
        assert_eq!(err.class, ErrorClass::GroupMismatch);
        assert!(fh.get_atomicity().unwrap());
        fh.close().unwrap();
    })
    .unwrap();
}

#[test]
fn sync_makes_writes_visible() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    for strategy in [Strategy::Positional, Strategy::Mapped] {
        let (out, _) = run_local(2, |g| {
            let mut fh =
                FileHandle::open_with(&g, &path, rw_create(), &no_info(), strategy).unwrap();
            fh.set_view(0, ElementType::Int32, ElementType::Int32, "native", &no_info())
                .unwrap();
            if g.rank() == 0 {
                fh.write_at(0, &[5i32; 10], 0, 10).unwrap();
            }
            fh.sync().unwrap();
            g.barrier().unwrap();
            fh.sync().unwrap();
            let mut buf = [0i32; 10];
            let n = fh.read_at(0, &mut buf, 0, 10).unwrap().count;
            fh.close().unwrap();
            (n, buf)
        })
        .unwrap();
        for (n, buf) in out {
            assert_eq!(n, 10, "{strategy}");
            assert_eq!(buf, [5; 10], "{strategy}");
        }
    }
}

#[test]
fn sync_fresh_handle_and_guards() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    run_local(1, |g| {
        let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
        fh.sync().unwrap();

        let mut req = fh.iwrite(vec![3u8; 64], 0, 64).unwrap();
        let err = fh.sync();
        // a request that finished before sync looked is still owed to its caller
        assert_eq!(err.unwrap_err().class, ErrorClass::PendingSplitCollective);
        req.wait().unwrap();
        fh.sync().unwrap();

        fh.read_all_begin(vec![0u8; 4], 0, 4).unwrap();
        assert_eq!(
            fh.sync().unwrap_err().class,
            ErrorClass::PendingSplitCollective
        );
        fh.read_all_end::<u8>().unwrap();
        fh.close().unwrap();
    })
    .unwrap();
}

#[test]
fn append_starts_at_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f");
    fs::write(&path, [1u8; 10]).unwrap();
    run_local(2, |g| {
        let amode = AccessMode::RDWR | AccessMode::APPEND;
        let mut fh = FileHandle::open(&g, &path, amode, &no_info()).unwrap();
        assert_eq!(fh.get_position().unwrap(), 10);
        assert_eq!(fh.get_position_shared().unwrap(), 10);
        fh.close().unwrap();
    })
    .unwrap();
}

#[test]
fn repeated_open_close_is_bracketed() {
    let dir = tempfile::tempdir().unwrap();
    let (_, report) = run_local(2, |g| {
        for i in 0..5 {
            let path = dir.path().join(format!("f{i}"));
            let mut fh = FileHandle::open(&g, &path, rw_create(), &no_info()).unwrap();
            let mut other = FileHandle::open(&g, dir.path().join("shared"), rw_create(), &no_info())
                .unwrap();
            assert_ne!(fh.file_id(), other.file_id());
            other.close().unwrap();
            fh.close().unwrap();
        }
    })
    .unwrap();
    assert_eq!(report.opens(), 10);
    assert_eq!(report.closes(), 10);
    assert!(Path::new(&dir.path().join("f4")).exists());
}
