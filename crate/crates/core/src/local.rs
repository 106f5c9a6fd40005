//! Run an SPMD closure on threads against an in-process coordinator.
//!
//! Each thread joins as its own rank over TCP, exactly as separate processes
//! would, so everything except process isolation is exercised.

use std::thread;

use crate::error::{IoError, Result};
use crate::group::{Coordinator, CoordinatorReport, Group};

/// Runs `f` once per rank and returns the per-rank results in rank order
/// together with the coordinator's report.
pub fn run_local<F, R>(np: u32, f: F) -> Result<(Vec<R>, CoordinatorReport)>
where
    F: Fn(Group) -> R + Send + Sync,
    R: Send,
{
    let coordinator = Coordinator::bind("127.0.0.1:0", np)
        .map_err(|e| IoError::coordinator(format!("bind: {e}")))?;
    let handle = coordinator
        .spawn()
        .map_err(|e| IoError::coordinator(format!("spawn: {e}")))?;
    let endpoint = handle.endpoint();
    let f = &f;
    let endpoint = endpoint.as_str();
    let results: Vec<Result<R>> = thread::scope(|s| {
        let workers: Vec<_> = (0..np)
            .map(|rank| {
                s.spawn(move || {
                    let group = Group::init(rank, np, endpoint)?;
                    let out = f(group.clone());
                    // a closure may already have finalized its group
                    let _ = group.finalize();
                    Ok(out)
                })
            })
            .collect();
        workers
            .into_iter()
            .map(|w| match w.join() {
                Ok(r) => r,
                Err(panic) => std::panic::resume_unwind(panic),
            })
            .collect()
    });
    let report = handle.wait();
    let results = results.into_iter().collect::<Result<Vec<R>>>()?;
    Ok((results, report))
}
