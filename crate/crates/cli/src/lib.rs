//! Command-line tools for pario: a process launcher, a bandwidth benchmark
//! and conformance suites. The binaries are thin wrappers over these
//! modules.

pub mod conformance;
pub mod launch;
pub mod perf;

/// Initialises logging from `RUST_LOG`, defaulting to warnings.
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
}
