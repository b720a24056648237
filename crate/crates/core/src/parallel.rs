//! Shared thread pool for the compute kernels.
//!
//! The pool size is capped by the `FFA_THREADS` environment variable
//! (0 or unset = one thread per core). Kernels stay deterministic under any
//! thread count: work is split so that every output element is produced by a
//! single sequential reduction.

use std::sync::OnceLock;

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Thread cap requested via `FFA_THREADS`; `None` means auto.
pub fn configured_threads() -> Option<usize> {
    match std::env::var("FFA_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) | Err(_) => None,
            Ok(n) => Some(n),
        },
        Err(_) => None,
    }
}

/// The process-wide compute pool.
pub fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = configured_threads() {
            builder = builder.num_threads(n);
        }
        builder.build().expect("failed to build compute thread pool")
    })
}

/// Whether a kernel touching `work` scalar ops should take its parallel path.
/// Below the threshold the fork/join overhead dominates.
pub fn should_parallelize(work: usize) -> bool {
    const PARALLEL_THRESHOLD: usize = 256 * 1024;
    work >= PARALLEL_THRESHOLD && pool().current_num_threads() > 1
}
