//! Bounded worker pools.

use rayon::{ThreadPoolBuildError, ThreadPoolBuilder};

/// Environment variable holding the default worker bound.
pub const WORKERS_ENV: &str = "GENFORGE_WORKERS";

/// Worker count from `GENFORGE_WORKERS`, if set to a positive integer.
pub fn env_workers() -> Option<usize> {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool when `None`.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, ThreadPoolBuildError> {
    match workers {
        Some(n) => Ok(ThreadPoolBuilder::new().num_threads(n.max(1)).build()?.install(f)),
        None => Ok(f()),
    }
}
